use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{specs_single, specs_two_stream, Activation, Activations, Head, Network, NnError, Scalar};

const STEP: f64 = 1e-3;
const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU; central differences are
    /// meaningless across a kink so these are left out.
    pub skipped_kinks: usize,
}

fn relu_mask(net: &Network<f64>, acts: &Activations<f64>) -> Vec<bool> {
    net.layers()
        .iter()
        .zip(&acts.layers)
        .filter(|(l, _)| l.spec.activation == Activation::Relu)
        .flat_map(|(_, a)| a.pre.iter().map(|&z| z > 0.0))
        .collect()
}

/// The scalar whose gradient is checked: `Q(s, a)` for value heads, and
/// `logit_a + V(s)` for actor-critic heads so both streams are exercised.
fn objective_gradient(net: &Network<f64>, action: usize) -> Vec<f64> {
    let mut g = vec![0.0; net.output_len()];
    g[action] = 1.0;
    if net.head() == Head::ActorCritic {
        g[net.action_count()] = 1.0;
    }
    g
}

fn objective(acts: &Activations<f64>, grad: &[f64]) -> f64 {
    acts.flat_output().iter().zip(grad).map(|(y, g)| y * g).sum()
}

/// Compares backpropagated gradients against central finite differences on a
/// 64-bit copy of `net`. Returns the largest
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<T: Scalar>(
    net: &Network<T>,
    input: &[T],
    action: usize,
) -> Result<GradCheckReport, NnError> {
    check_impl(net, input, action, false)
}

fn check_impl<T: Scalar>(
    net: &Network<T>,
    input: &[T],
    action: usize,
    corrupt: bool,
) -> Result<GradCheckReport, NnError> {
    if action >= net.action_count() {
        return Err(NnError::Dimension {
            expected: net.action_count(),
            found: action,
        });
    }
    let mut shadow: Network<f64> = net.cast();
    let x: Vec<f64> = input.iter().map(|v| v.to_f64().unwrap()).collect();
    let base = shadow.forward(&x)?;
    let og = objective_gradient(&shadow, action);
    let mut analytic = shadow.backward(&base, &og)?;
    if corrupt {
        // Negative control: a backward pass that is wrong in one layer.
        for g in &mut analytic.layers[0].weights {
            *g = *g * 1.5 + 0.1;
        }
    }
    let analytic: Vec<f64> = analytic.values().copied().collect();
    let mask = relu_mask(&shadow, &base);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut acts = Activations::for_network(&shadow);
    for (k, &a) in analytic.iter().enumerate() {
        let orig = shadow.param(k);
        shadow.set_param(k, orig + STEP);
        shadow.forward_into(&x, &mut acts)?;
        let plus = objective(&acts, &og);
        let kink_plus = relu_mask(&shadow, &acts) != mask;
        shadow.set_param(k, orig - STEP);
        shadow.forward_into(&x, &mut acts)?;
        let minus = objective(&acts, &og);
        let kink_minus = relu_mask(&shadow, &acts) != mask;
        shadow.set_param(k, orig);
        if kink_plus || kink_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    /// Worst error per head over the suite.
    pub per_head: Vec<(Head, GradCheckReport)>,
    pub networks: usize,
}

impl SuiteReport {
    pub fn max_relative_error(&self) -> f64 {
        self.per_head
            .iter()
            .map(|(_, r)| r.max_relative_error)
            .fold(0.0, f64::max)
    }
}

/// Random small network: widths up to 16, at most three layers on any path.
pub fn random_small_network(rng: &mut impl Rng, head: Head) -> Network<f32> {
    let width = |rng: &mut dyn rand::RngCore| rng.gen_range(1..=16usize);
    let input = width(rng);
    let actions = rng.gen_range(2..=8usize);
    let specs = match head {
        Head::Single => {
            let hidden: Vec<usize> = (0..rng.gen_range(0..=2)).map(|_| width(rng)).collect();
            specs_single(input, &hidden, actions)
        }
        _ => {
            let shared: Vec<usize> = (0..rng.gen_range(0..=1)).map(|_| width(rng)).collect();
            let stream: Vec<usize> = (0..rng.gen_range(0..=1)).map(|_| width(rng)).collect();
            specs_two_stream(head, input, &shared, &stream, actions)
        }
    };
    let mut net = Network::new(&specs, head, rng.gen()).expect("valid random layout");
    // Non-zero biases so every code path carries signal.
    for layer in net.layers_mut() {
        for b in &mut layer.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    net
}

/// Gradient-checks `count` random small networks spread across all three
/// heads. `corrupt_backward` deliberately breaks the analytic gradient and
/// must make the suite fail.
pub fn gradient_check_suite(
    seed: u64,
    count: usize,
    corrupt_backward: bool,
) -> Result<SuiteReport, NnError> {
    let heads = [Head::Single, Head::Dueling, Head::ActorCritic];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_head: Vec<(Head, GradCheckReport)> = heads
        .iter()
        .map(|&h| {
            (
                h,
                GradCheckReport {
                    max_relative_error: 0.0,
                    checked: 0,
                    skipped_kinks: 0,
                },
            )
        })
        .collect();
    for i in 0..count {
        let slot = i % heads.len();
        let net = random_small_network(&mut rng, heads[slot]);
        let input: Vec<f32> = (0..net.input_width())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let action = rng.gen_range(0..net.action_count());
        let r = check_impl(&net, &input, action, corrupt_backward)?;
        let agg = &mut per_head[slot].1;
        agg.max_relative_error = agg.max_relative_error.max(r.max_relative_error);
        agg.checked += r.checked;
        agg.skipped_kinks += r.skipped_kinks;
    }
    Ok(SuiteReport {
        per_head,
        networks: count,
    })
}
