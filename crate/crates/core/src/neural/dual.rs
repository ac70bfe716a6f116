//! Wasserstein-1 dual estimation and adversarial transport-map training.
//!
//! A clipped potential network is trained by stochastic gradient ascent on
//! the dual objective (mean potential on the source minus the target); the raw dual value is the
//! distance estimate. The transport map is trained against the same kind of
//! critic in an alternating minimax loop: several critic ascent steps per
//! one map step.

use crate::error::{Error, Result};
use crate::neural::net::{Activation, Gradients, RmsProp, SmallDenseNetwork};
use crate::rng::Rng;

/// Hidden width shared by the potential (one hidden layer) and the map (two).
pub const HIDDEN_WIDTH: usize = 64;

const W1_STREAM: u64 = 0x7731;
const MAP_STREAM: u64 = 0x6f6d;

/// Hyperparameters for dual estimation and map training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Critic ascent steps per outer iteration.
    pub critic_steps: usize,
    pub total_iterations: usize,
    pub batch_size: usize,
    pub clip_bound: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            critic_steps: 5,
            total_iterations: 3000,
            batch_size: 64,
            clip_bound: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_bound", self.clip_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} {v} must be > 0")));
            }
        }
        if self.critic_steps == 0 || self.total_iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "critic_steps, total_iterations, and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A set of d-dimensional samples, optionally carrying a weight per row.
/// Unweighted sets sample uniformly; weighted ones by mass.
#[derive(Debug, Clone)]
pub struct SampleSet {
    data: Vec<f64>,
    dim: usize,
    weights: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "sample set: {} values for dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(SampleSet {
            data,
            dim,
            weights: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch("ragged sample rows".into()));
            }
            data.extend_from_slice(r);
        }
        SampleSet::new(data, dim)
    }

    /// Treat a weighted point cloud as a sample set; batches draw support
    /// points proportionally to their mass.
    pub fn from_cloud(cloud: &crate::features::WeightedPointCloud) -> Self {
        SampleSet {
            data: cloud.points_flat().to_vec(),
            dim: cloud.dim(),
            weights: Some(cloud.weights().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        match &self.weights {
            Some(w) => rng.weighted_index(w),
            None => rng.below(self.len()),
        }
    }

    /// Mean and standard deviation per dimension, honoring weights.
    pub fn stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let uniform = 1.0 / n as f64;
        let weight = |i: usize| self.weights.as_ref().map_or(uniform, |w| w[i]);
        let total: f64 = (0..n).map(&weight).sum();
        let mut mean = vec![0.0; self.dim];
        for i in 0..n {
            let w = weight(i) / total;
            for (m, &x) in mean.iter_mut().zip(self.row(i)) {
                *m += w * x;
            }
        }
        let mut var = vec![0.0; self.dim];
        for i in 0..n {
            let w = weight(i) / total;
            for (d, (v, &x)) in var.iter_mut().zip(self.row(i)).enumerate() {
                let c = x - mean[d];
                *v += w * c * c;
            }
        }
        (mean, var.iter().map(|v| v.sqrt()).collect())
    }
}

/// Conditioning signal for the transport map: per-dimension mean and standard
/// deviation of the source and target, concatenated (length 4d).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector(Vec<f64>);

impl ConditionVector {
    pub fn from_samples(source: &SampleSet, target: &SampleSet) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch(format!(
                "source dim {} vs target dim {}",
                source.dim(),
                target.dim()
            )));
        }
        let (sm, ss) = source.stats();
        let (tm, ts) = target.stats();
        let mut v = Vec::with_capacity(4 * source.dim());
        v.extend(sm);
        v.extend(ss);
        v.extend(tm);
        v.extend(ts);
        Ok(ConditionVector(v))
    }

    pub fn from_clouds(
        source: &crate::features::WeightedPointCloud,
        target: &crate::features::WeightedPointCloud,
    ) -> Result<Self> {
        ConditionVector::from_samples(&SampleSet::from_cloud(source), &SampleSet::from_cloud(target))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Potential network: one hidden layer, scalar output, clipped.
///
/// The first layer starts with nonnegative weights and nonnegative biases,
/// so at initialization no hidden unit is dead on the whole data range.
fn critic_network(input_dim: usize, clip: f64, rng: &mut Rng) -> Result<SmallDenseNetwork> {
    let mut net = SmallDenseNetwork::random(
        &[input_dim, HIDDEN_WIDTH, 1],
        &[Activation::Relu, Activation::Identity],
        Some(clip),
        rng,
    )?;
    let first = &mut net.layers_mut()[0];
    for p in first.weights.iter_mut().chain(first.bias.iter_mut()) {
        *p = p.abs();
    }
    Ok(net)
}

/// Accumulate dual-objective gradients for one batch side.
/// `sign` is the coefficient of the batch's mean potential in the loss.
fn accumulate_batch(
    potential: &SmallDenseNetwork,
    samples: &SampleSet,
    batch: &[usize],
    sign: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let scale = sign / batch.len() as f64;
    let mut value = 0.0;
    for &i in batch {
        let trace = potential.forward_trace(samples.row(i))?;
        value += trace.output()[0];
        let (g, _) = potential.backward(&trace, &[scale])?;
        grads.accumulate(&g);
    }
    Ok(value / batch.len() as f64)
}

fn draw_batch(samples: &SampleSet, size: usize, rng: &mut Rng) -> Vec<usize> {
    (0..size).map(|_| samples.draw(rng)).collect()
}

/// Mean potential value over a whole sample set.
fn mean_potential(potential: &SmallDenseNetwork, samples: &SampleSet) -> Result<f64> {
    let n = samples.len();
    let uniform = 1.0 / n as f64;
    let mut total_w = 0.0;
    let mut acc = 0.0;
    for i in 0..n {
        let w = match &samples.weights {
            Some(w) => w[i],
            None => uniform,
        };
        acc += w * potential.forward(samples.row(i))?[0];
        total_w += w;
    }
    Ok(acc / total_w)
}

/// Estimate the order-1 Wasserstein distance between two sample sets by
/// training a clipped potential on the dual objective.
///
/// The returned value is the raw dual gap (source mean minus target mean of
/// the trained potential) over
/// the full sets; clipping bounds the class Lipschitz constant at
/// `HIDDEN_WIDTH * clip_bound^2`, so the estimate is a lower bound up to
/// that factor and optimization error.
pub fn estimate_w1(
    source: &SampleSet,
    target: &SampleSet,
    config: &TrainConfig,
) -> Result<(SmallDenseNetwork, f64)> {
    config.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} vs target dim {}",
            source.dim(),
            target.dim()
        )));
    }
    let mut rng = Rng::derive(config.seed, W1_STREAM);
    let mut potential = critic_network(source.dim(), config.clip_bound, &mut rng)?;
    let mut opt = RmsProp::new(&potential, config.learning_rate);
    for iter in 0..config.total_iterations {
        let bs = draw_batch(source, config.batch_size, &mut rng);
        let bt = draw_batch(target, config.batch_size, &mut rng);
        let mut grads = Gradients::zeros_like(&potential);
        // Ascend E_src - E_tgt: loss has sign -1 on source, +1 on target.
        let vs = accumulate_batch(&potential, source, &bs, -1.0, &mut grads)?;
        let vt = accumulate_batch(&potential, target, &bt, 1.0, &mut grads)?;
        let objective = vs - vt;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "dual objective became non-finite at iteration {iter}; lower the learning rate"
            )));
        }
        opt.step(&mut potential, &grads);
        debug_assert!(potential.max_abs_param() <= config.clip_bound);
    }
    let estimate = mean_potential(&potential, source)? - mean_potential(&potential, target)?;
    Ok((potential, estimate))
}

/// Transported point: the map predicts a displacement for the concatenated
/// `[v, condition]` input, and the output is `v + displacement`.
pub fn transport_sample(
    map_net: &SmallDenseNetwork,
    v: &[f64],
    condition: &ConditionVector,
) -> Result<Vec<f64>> {
    if map_net.input_dim() != v.len() + condition.len() || map_net.output_dim() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "map {}->{} vs point dim {} with condition {}",
            map_net.input_dim(),
            map_net.output_dim(),
            v.len(),
            condition.len()
        )));
    }
    let mut input = Vec::with_capacity(map_net.input_dim());
    input.extend_from_slice(v);
    input.extend_from_slice(condition.values());
    let displacement = map_net.forward(&input)?;
    Ok(v.iter().zip(&displacement).map(|(x, d)| x + d).collect())
}

/// Train a conditional transport map against a clipped critic.
///
/// Each outer iteration runs `critic_steps` ascent steps on the potential
/// (map fixed), then one descent step on the map (potential fixed). The map
/// network sees `[v, condition]` and emits a displacement, so it starts near
/// the identity and learns only the shift the critic demands.
pub fn train_notpe(
    source: &SampleSet,
    target: &SampleSet,
    condition: &ConditionVector,
    config: &TrainConfig,
) -> Result<SmallDenseNetwork> {
    config.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source dim {} vs target dim {}",
            source.dim(),
            target.dim()
        )));
    }
    let d = source.dim();
    if condition.len() != 4 * d {
        return Err(Error::DimensionMismatch(format!(
            "condition length {} vs expected {}",
            condition.len(),
            4 * d
        )));
    }
    let mut rng = Rng::derive(config.seed, MAP_STREAM);
    let mut map_net = SmallDenseNetwork::random(
        &[d + condition.len(), HIDDEN_WIDTH, HIDDEN_WIDTH, d],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        Some(config.clip_bound),
        &mut rng,
    )?;
    let mut critic = critic_network(d, config.clip_bound, &mut rng)?;
    let mut opt_map = RmsProp::new(&map_net, config.learning_rate);
    let mut opt_critic = RmsProp::new(&critic, config.learning_rate);

    let mut map_input = vec![0.0; d + condition.len()];
    for iter in 0..config.total_iterations {
        // Critic: ascend (mean score of real points) - (mean score of
        // transported points).
        for _ in 0..config.critic_steps {
            let bt = draw_batch(target, config.batch_size, &mut rng);
            let br = draw_batch(source, config.batch_size, &mut rng);
            let mut grads = Gradients::zeros_like(&critic);
            let vt = accumulate_batch(&critic, target, &bt, -1.0, &mut grads)?;
            let mut vf = 0.0;
            let scale = 1.0 / br.len() as f64;
            for &i in &br {
                let y = transport_sample(&map_net, source.row(i), condition)?;
                let trace = critic.forward_trace(&y)?;
                vf += trace.output()[0];
                let (g, _) = critic.backward(&trace, &[scale])?;
                grads.accumulate(&g);
            }
            vf *= scale;
            if !(vt - vf).is_finite() {
                return Err(Error::Numerical(format!(
                    "critic objective became non-finite at iteration {iter}"
                )));
            }
            opt_critic.step(&mut critic, &grads);
            debug_assert!(critic.max_abs_param() <= config.clip_bound);
        }
        // Map: one descent step against the fixed critic, raising the
        // critic's score of transported points.
        let br = draw_batch(source, config.batch_size, &mut rng);
        let mut grads = Gradients::zeros_like(&map_net);
        let scale = -1.0 / br.len() as f64;
        let mut objective = 0.0;
        for &i in &br {
            let v = source.row(i);
            map_input[..d].copy_from_slice(v);
            map_input[d..].copy_from_slice(condition.values());
            let trace_o = map_net.forward_trace(&map_input)?;
            let y: Vec<f64> = v.iter().zip(trace_o.output()).map(|(x, g)| x + g).collect();
            let trace_p = critic.forward_trace(&y)?;
            objective += trace_p.output()[0];
            let (_, dy) = critic.backward(&trace_p, &[scale])?;
            // y = v + displacement, so the displacement gradient equals dy.
            let (g, _) = map_net.backward(&trace_o, &dy)?;
            grads.accumulate(&g);
        }
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "map objective became non-finite at iteration {iter}"
            )));
        }
        opt_map.step(&mut map_net, &grads);
        debug_assert!(map_net.max_abs_param() <= config.clip_bound);
    }
    Ok(map_net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_samples(lo: f64, hi: f64, n: usize, rng: &mut Rng) -> SampleSet {
        SampleSet::new((0..n).map(|_| rng.range_f64(lo, hi)).collect(), 1).unwrap()
    }

    fn benchmark_config(seed: u64) -> TrainConfig {
        // Width 64 with clip 0.125 pins the class Lipschitz constant at
        // 64 * 0.125^2 = 1.0, so the raw dual value tracks W1 directly.
        TrainConfig {
            clip_bound: 0.125,
            learning_rate: 2e-3,
            total_iterations: 3000,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_sample_sets_give_zero_estimate() {
        let mut rng = Rng::new(1);
        let s = uniform_samples(0.0, 1.0, 256, &mut rng);
        let (_, w1) = estimate_w1(&s, &s.clone(), &benchmark_config(7)).unwrap();
        assert!(w1.abs() < 0.05, "estimate {w1}");
    }

    #[test]
    fn point_masses_at_distance_two() {
        let source = SampleSet::new(vec![0.0; 256], 1).unwrap();
        let target = SampleSet::new(vec![2.0; 256], 1).unwrap();
        let (_, w1) = estimate_w1(&source, &target, &benchmark_config(3)).unwrap();
        assert!((w1 - 2.0).abs() < 0.2, "estimate {w1} not within 10% of 2.0");
    }

    #[test]
    fn shifted_uniforms_at_distance_two() {
        let mut rng = Rng::new(5);
        let source = uniform_samples(0.0, 1.0, 512, &mut rng);
        let target = uniform_samples(2.0, 3.0, 512, &mut rng);
        let (_, w1) = estimate_w1(&source, &target, &benchmark_config(11)).unwrap();
        assert!((w1 - 2.0).abs() < 0.2, "estimate {w1} not within 10% of 2.0");
    }

    #[test]
    fn estimate_is_deterministic_under_seed() {
        let mut rng = Rng::new(8);
        let source = uniform_samples(0.0, 1.0, 128, &mut rng);
        let target = uniform_samples(1.0, 2.0, 128, &mut rng);
        let mut cfg = benchmark_config(21);
        cfg.total_iterations = 200;
        let (_, a) = estimate_w1(&source, &target, &cfg).unwrap();
        let (_, b) = estimate_w1(&source, &target, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn estimate_is_roughly_symmetric() {
        let mut rng = Rng::new(13);
        let source = uniform_samples(0.0, 1.0, 256, &mut rng);
        let target = uniform_samples(2.0, 3.0, 256, &mut rng);
        let cfg = benchmark_config(2);
        let (_, ab) = estimate_w1(&source, &target, &cfg).unwrap();
        let (_, ba) = estimate_w1(&target, &source, &cfg).unwrap();
        assert!(
            (ab - ba).abs() <= 0.15 * ab.abs().max(ba.abs()),
            "asymmetry: {ab} vs {ba}"
        );
    }

    fn gaussian_blob(center: &[f64], sigma: f64, n: usize, rng: &mut Rng) -> SampleSet {
        let d = center.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for &c in center {
                data.push(c + sigma * rng.normal());
            }
        }
        SampleSet::new(data, d).unwrap()
    }

    #[test]
    fn identity_task_keeps_map_near_identity() {
        let mut rng = Rng::new(17);
        let source = gaussian_blob(&[0.0, 0.0], 0.1, 256, &mut rng);
        let target = gaussian_blob(&[0.0, 0.0], 0.1, 256, &mut rng);
        let cond = ConditionVector::from_samples(&source, &target).unwrap();
        let mut cfg = benchmark_config(4);
        cfg.total_iterations = 600;
        let map_net = train_notpe(&source, &target, &cond, &cfg).unwrap();
        let mut err = 0.0;
        for i in 0..source.len() {
            let v = source.row(i);
            let y = transport_sample(&map_net, v, &cond).unwrap();
            err += y.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
        err /= source.len() as f64;
        // Data range is about 0.6 for a sigma-0.1 blob.
        assert!(err < 0.05 * 0.6, "identity map error {err}");
    }

    #[test]
    fn translation_task_recovers_the_shift() {
        let mut rng = Rng::new(19);
        let shift = [1.0, 0.5];
        let source = gaussian_blob(&[0.0, 0.0], 0.1, 512, &mut rng);
        let target = gaussian_blob(&shift, 0.1, 512, &mut rng);
        let cond = ConditionVector::from_samples(&source, &target).unwrap();
        let map_net = train_notpe(&source, &target, &cond, &benchmark_config(6)).unwrap();
        let mut err = 0.0;
        for i in 0..source.len() {
            let v = source.row(i);
            let y = transport_sample(&map_net, v, &cond).unwrap();
            err += y
                .iter()
                .zip(v)
                .zip(&shift)
                .map(|((a, b), t)| {
                    let e = a - (b + t);
                    e * e
                })
                .sum::<f64>()
                .sqrt();
        }
        err /= source.len() as f64;
        assert!(err < 0.1, "translation map error {err}");
    }

    #[test]
    fn condition_vector_has_length_4d() {
        let mut rng = Rng::new(23);
        let s = gaussian_blob(&[0.0, 1.0, 2.0], 0.2, 64, &mut rng);
        let t = gaussian_blob(&[1.0, 1.0, 1.0], 0.2, 64, &mut rng);
        let cond = ConditionVector::from_samples(&s, &t).unwrap();
        assert_eq!(cond.len(), 12);
        assert!(cond.values().iter().all(|v| v.is_finite()));
        // First block is the source mean.
        assert!((cond.values()[2] - 2.0).abs() < 0.1);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = SampleSet::new(vec![0.0, 1.0], 1).unwrap();
        let b = SampleSet::new(vec![0.0, 1.0], 2).unwrap();
        assert!(estimate_w1(&a, &b, &TrainConfig::default()).is_err());
        assert!(ConditionVector::from_samples(&a, &b).is_err());
    }
}
