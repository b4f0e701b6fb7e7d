use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dueling_aggregate_into, Activation, Head, LayerSpec, NnError, Scalar};

/// One fully connected layer. `weights` is `output_width x input_width`,
/// row-major (one row per output unit).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub spec: LayerSpec,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: vec![T::zero(); spec.input_width * spec.output_width],
            biases: vec![T::zero(); spec.output_width],
        }
    }

    fn forward(&self, input: &[T], acts: &mut LayerActs<T>) {
        let rows = self.weights.chunks_exact(self.spec.input_width);
        for (j, row) in rows.enumerate() {
            let z = self.biases[j] + dot(row, input);
            acts.pre[j] = z;
            acts.post[j] = match self.spec.activation {
                Activation::Relu => z.max(T::zero()),
                Activation::Identity => z,
            };
        }
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize the reduction. The summation order is fixed, so results are
/// reproducible.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Dense<T>>,
    head: Head,
    trunk_len: usize,
    stream_len: usize,
}

/// Checks the layer table against the head and returns `(trunk_len, stream_len)`.
fn layout(specs: &[LayerSpec], head: Head) -> Result<(usize, usize), NnError> {
    if specs.is_empty() {
        return Err(NnError::Empty);
    }
    for (index, s) in specs.iter().enumerate() {
        if s.input_width == 0 || s.output_width == 0 {
            return Err(NnError::ZeroWidth { index });
        }
    }
    let bad = |reason: &str| NnError::HeadLayout {
        head,
        reason: reason.to_string(),
    };
    let chain = |range: Range<usize>, input: usize| -> Result<(), NnError> {
        let mut found = input;
        for index in range {
            if specs[index].input_width != found {
                return Err(NnError::ChainMismatch {
                    index,
                    expected: specs[index].input_width,
                    found,
                });
            }
            found = specs[index].output_width;
        }
        Ok(())
    };
    match head {
        Head::Single => {
            if specs.last().unwrap().activation != Activation::Identity {
                return Err(NnError::FinalRelu);
            }
            chain(0..specs.len(), specs[0].input_width)?;
            Ok((specs.len(), 0))
        }
        Head::Dueling | Head::ActorCritic => {
            let n = specs.len();
            if specs[n - 1].activation != Activation::Identity {
                return Err(NnError::FinalRelu);
            }
            // The first stream ends at the only other identity layer.
            let linear: Vec<usize> = (0..n)
                .filter(|&i| specs[i].activation == Activation::Identity)
                .collect();
            if linear.len() != 2 {
                return Err(if linear.len() < 2 {
                    NnError::FinalRelu
                } else {
                    bad("only the two stream outputs may be linear")
                });
            }
            let first_end = linear[0];
            let stream_len = n - 1 - first_end;
            if first_end + 1 < stream_len {
                return Err(bad("the two streams must have equal depth"));
            }
            let trunk_len = first_end + 1 - stream_len;
            chain(0..trunk_len, specs[0].input_width)?;
            let shared = if trunk_len == 0 {
                specs[0].input_width
            } else {
                specs[trunk_len - 1].output_width
            };
            chain(trunk_len..trunk_len + stream_len, shared)?;
            chain(trunk_len + stream_len..n, shared)?;
            let first_out = specs[trunk_len + stream_len - 1].output_width;
            let second_out = specs[n - 1].output_width;
            match head {
                Head::Dueling if first_out != 1 => Err(bad("value stream must have one output")),
                Head::ActorCritic if second_out != 1 => {
                    Err(bad("value stream must have one output"))
                }
                _ => Ok((trunk_len, stream_len)),
            }
        }
    }
}

/// Layer table for a single-head network.
pub fn specs_single(input: usize, hidden: &[usize], outputs: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut width = input;
    for &h in hidden {
        specs.push(LayerSpec::relu(width, h));
        width = h;
    }
    specs.push(LayerSpec::linear(width, outputs));
    specs
}

/// Layer table for a dueling or actor-critic network: `shared` hidden layers,
/// then two streams with `stream_hidden` layers each.
pub fn specs_two_stream(
    head: Head,
    input: usize,
    shared: &[usize],
    stream_hidden: &[usize],
    actions: usize,
) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input;
    for &h in shared {
        specs.push(LayerSpec::relu(width, h));
        width = h;
    }
    let (first_out, second_out) = match head {
        Head::Dueling => (1, actions),
        _ => (actions, 1),
    };
    for out in [first_out, second_out] {
        let mut w = width;
        for &h in stream_hidden {
            specs.push(LayerSpec::relu(w, h));
            w = h;
        }
        specs.push(LayerSpec::linear(w, out));
    }
    specs
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-style uniform weights (`bound = sqrt(6 / fan_in)`)
    /// and zero biases. The same seed always yields the same parameters.
    pub fn new(specs: &[LayerSpec], head: Head, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(specs, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let bound = (6.0 / layer.spec.input_width as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(specs: &[LayerSpec], head: Head) -> Result<Self, NnError> {
        let (trunk_len, stream_len) = layout(specs, head)?;
        Ok(Self {
            layers: specs.iter().map(|&s| Dense::zeros(s)).collect(),
            head,
            trunk_len,
            stream_len,
        })
    }

    /// Assembles a network from explicit per-layer `(weights, biases)`.
    pub fn from_parts(
        specs: &[LayerSpec],
        head: Head,
        params: Vec<(Vec<T>, Vec<T>)>,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(specs, head)?;
        if params.len() != specs.len() {
            return Err(NnError::Dimension {
                expected: specs.len(),
                found: params.len(),
            });
        }
        for (layer, (w, b)) in net.layers.iter_mut().zip(params) {
            for (expected, found) in [(layer.weights.len(), w.len()), (layer.biases.len(), b.len())]
            {
                if expected != found {
                    return Err(NnError::Dimension { expected, found });
                }
            }
            layer.weights = w;
            layer.biases = b;
        }
        Ok(net)
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    /// Number of actions the head scores.
    pub fn action_count(&self) -> usize {
        match self.head {
            Head::Single | Head::Dueling => self.layers.last().unwrap().spec.output_width,
            Head::ActorCritic => self.layers[self.trunk_len + self.stream_len - 1]
                .spec
                .output_width,
        }
    }

    /// Length of the flattened head output (see [`Activations::flat_output`]).
    pub fn output_len(&self) -> usize {
        match self.head {
            Head::ActorCritic => self.action_count() + 1,
            _ => self.action_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameter `k` in payload order: per layer, weights then biases.
    pub fn param(&self, k: usize) -> T {
        let (layer, idx, is_bias) = self.locate(k);
        let l = &self.layers[layer];
        if is_bias {
            l.biases[idx]
        } else {
            l.weights[idx]
        }
    }

    pub fn set_param(&mut self, k: usize, value: T) {
        let (layer, idx, is_bias) = self.locate(k);
        let l = &mut self.layers[layer];
        if is_bias {
            l.biases[idx] = value;
        } else {
            l.weights[idx] = value;
        }
    }

    fn locate(&self, mut k: usize) -> (usize, usize, bool) {
        for (i, l) in self.layers.iter().enumerate() {
            if k < l.weights.len() {
                return (i, k, false);
            }
            k -= l.weights.len();
            if k < l.biases.len() {
                return (i, k, true);
            }
            k -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |xs: &[T]| -> Vec<U> {
            xs.iter()
                .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    spec: l.spec,
                    weights: conv(&l.weights),
                    biases: conv(&l.biases),
                })
                .collect(),
            head: self.head,
            trunk_len: self.trunk_len,
            stream_len: self.stream_len,
        }
    }

    /// Copies parameters from a network of identical shape.
    pub fn copy_params_from(&mut self, other: &Network<T>) {
        debug_assert_eq!(self.specs(), other.specs());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.biases.copy_from_slice(&src.biases);
        }
    }

    fn stream_ranges(&self) -> (Range<usize>, Range<usize>) {
        let a = self.trunk_len..self.trunk_len + self.stream_len;
        let b = a.end..self.layers.len();
        (a, b)
    }

    /// Which layer feeds layer `i`; `None` means the network input.
    fn source(&self, i: usize) -> Option<usize> {
        let starts_stream = self.head != Head::Single
            && (i == self.trunk_len || i == self.trunk_len + self.stream_len);
        if starts_stream {
            self.trunk_len.checked_sub(1)
        } else {
            i.checked_sub(1)
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<Activations<T>, NnError> {
        let mut acts = Activations::for_network(self);
        self.forward_into(input, &mut acts)?;
        Ok(acts)
    }

    /// Forward pass reusing the buffers in `acts` (which must come from
    /// [`Activations::for_network`] on a network of the same shape).
    pub fn forward_into(&self, input: &[T], acts: &mut Activations<T>) -> Result<(), NnError> {
        if input.len() != self.input_width() {
            return Err(NnError::Dimension {
                expected: self.input_width(),
                found: input.len(),
            });
        }
        acts.input.clear();
        acts.input.extend_from_slice(input);
        for i in 0..self.layers.len() {
            let src = self.source(i);
            let (done, rest) = acts.layers.split_at_mut(i);
            let x = match src {
                None => &acts.input[..],
                Some(k) => &done[k].post[..],
            };
            self.layers[i].forward(x, &mut rest[0]);
        }
        acts.output = match self.head {
            Head::Single => HeadOutput::Q(acts.layers.last().unwrap().post.clone()),
            Head::Dueling => {
                let (first, second) = self.stream_ranges();
                let value = acts.layers[first.end - 1].post[0];
                let advantage = acts.layers[second.end - 1].post.clone();
                let mut q = vec![T::zero(); advantage.len()];
                dueling_aggregate_into(value, &advantage, &mut q);
                HeadOutput::Dueling {
                    value,
                    advantage,
                    q,
                }
            }
            Head::ActorCritic => {
                let (first, second) = self.stream_ranges();
                HeadOutput::ActorCritic {
                    logits: acts.layers[first.end - 1].post.clone(),
                    value: acts.layers[second.end - 1].post[0],
                }
            }
        };
        Ok(())
    }

    pub fn backward(
        &self,
        acts: &Activations<T>,
        output_gradient: &[T],
    ) -> Result<Gradients<T>, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(acts, output_gradient, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradients for one sample into `grads`.
    ///
    /// `output_gradient` is the derivative of the loss with respect to the
    /// flattened head output: Q-values for single and dueling heads, logits
    /// followed by the value for actor-critic heads.
    pub fn backward_accumulate(
        &self,
        acts: &Activations<T>,
        output_gradient: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<(), NnError> {
        if output_gradient.len() != self.output_len() {
            return Err(NnError::Dimension {
                expected: self.output_len(),
                found: output_gradient.len(),
            });
        }
        if acts.layers.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(NnError::Dimension {
                expected: self.layers.len(),
                found: acts.layers.len().min(grads.layers.len()),
            });
        }
        if self.head == Head::Single {
            self.backprop_segment(0..self.layers.len(), acts, output_gradient.to_vec(), grads, false);
            return Ok(());
        }
        let (first, second) = self.stream_ranges();
        let (d_first, d_second) = match self.head {
            Head::Dueling => {
                let n = T::from_usize(output_gradient.len()).unwrap();
                let total: T = output_gradient.iter().copied().sum();
                let mean = total / n;
                let d_adv = output_gradient.iter().map(|&g| g - mean).collect();
                (vec![total], d_adv)
            }
            _ => {
                let n = output_gradient.len() - 1;
                (output_gradient[..n].to_vec(), vec![output_gradient[n]])
            }
        };
        let need_trunk = self.trunk_len > 0;
        let g1 = self.backprop_segment(first, acts, d_first, grads, need_trunk);
        let g2 = self.backprop_segment(second, acts, d_second, grads, need_trunk);
        if let (Some(mut g), Some(g2)) = (g1, g2) {
            for (a, b) in g.iter_mut().zip(&g2) {
                *a += *b;
            }
            self.backprop_segment(0..self.trunk_len, acts, g, grads, false);
        }
        Ok(())
    }

    /// Backpropagates through the contiguous chain `range`, starting from the
    /// gradient with respect to its last layer's output. Returns the gradient
    /// with respect to the chain's input when `input_grad` is set.
    fn backprop_segment(
        &self,
        range: Range<usize>,
        acts: &Activations<T>,
        mut d_post: Vec<T>,
        grads: &mut Gradients<T>,
        input_grad: bool,
    ) -> Option<Vec<T>> {
        for i in range.clone().rev() {
            let layer = &self.layers[i];
            let la = &acts.layers[i];
            let mut d_pre = d_post;
            if layer.spec.activation == Activation::Relu {
                for (d, &z) in d_pre.iter_mut().zip(&la.pre) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let x = match self.source(i) {
                None => &acts.input[..],
                Some(k) => &acts.layers[k].post[..],
            };
            let g = &mut grads.layers[i];
            let n_in = layer.spec.input_width;
            let want_input = i > range.start || input_grad;
            let mut d_x = if want_input {
                vec![T::zero(); n_in]
            } else {
                Vec::new()
            };
            for (j, &d) in d_pre.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                g.biases[j] += d;
                axpy(d, x, &mut g.weights[j * n_in..(j + 1) * n_in]);
                if want_input {
                    axpy(d, &layer.weights[j * n_in..(j + 1) * n_in], &mut d_x);
                }
            }
            if !want_input {
                return None;
            }
            d_post = d_x;
        }
        Some(d_post)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerActs<T> {
    pub pre: Vec<T>,
    pub post: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput<T> {
    Q(Vec<T>),
    Dueling { value: T, advantage: Vec<T>, q: Vec<T> },
    ActorCritic { logits: Vec<T>, value: T },
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations<T> {
    pub input: Vec<T>,
    pub layers: Vec<LayerActs<T>>,
    pub output: HeadOutput<T>,
}

impl<T: Scalar> Activations<T> {
    pub fn for_network(net: &Network<T>) -> Self {
        Self {
            input: Vec::with_capacity(net.input_width()),
            layers: net
                .layers
                .iter()
                .map(|l| LayerActs {
                    pre: vec![T::zero(); l.spec.output_width],
                    post: vec![T::zero(); l.spec.output_width],
                })
                .collect(),
            output: HeadOutput::Q(Vec::new()),
        }
    }

    /// Q-values for single and dueling heads.
    pub fn q_values(&self) -> Option<&[T]> {
        match &self.output {
            HeadOutput::Q(q) | HeadOutput::Dueling { q, .. } => Some(q),
            HeadOutput::ActorCritic { .. } => None,
        }
    }

    /// Q-values, or the policy logits for an actor-critic head.
    pub fn action_scores(&self) -> &[T] {
        match &self.output {
            HeadOutput::Q(q) | HeadOutput::Dueling { q, .. } => q,
            HeadOutput::ActorCritic { logits, .. } => logits,
        }
    }

    /// Head output as one vector: Q-values, or logits followed by the value.
    pub fn flat_output(&self) -> Vec<T> {
        match &self.output {
            HeadOutput::Q(q) | HeadOutput::Dueling { q, .. } => q.clone(),
            HeadOutput::ActorCritic { logits, value } => {
                let mut v = logits.clone();
                v.push(*value);
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// A buffer shaped like a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    biases: vec![T::zero(); l.biases.len()],
                })
                .collect(),
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// Every entry in payload order.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|x| *x = T::zero());
    }

    pub fn scale(&mut self, s: T) {
        self.values_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn matches_shape(&self, net: &Network<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}
