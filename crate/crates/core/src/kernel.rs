//! Forward diffusion: the deformation kernel (gradient drift plus Gaussian
//! noise), the pure-noise baseline kernel, trajectory generation in both
//! operating modes, and the data-driven average-shape initializer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{
    chamfer_assignments, total_energy, total_energy_frozen, total_gradient,
    ChamferAssignments, EnergyContext, EnergyReport, RegularizerWeights,
};
use crate::error::{Error, Result};
use crate::rng::normal;
use crate::shape::{Shape, ShapeKind, Vec3};

/// Neighbor count used when freezing k-nearest contexts during diffusion.
pub const DIFFUSION_KNN: usize = 8;

/// How many steps a frozen k-nearest neighborhood is reused before rebuild.
pub const DEFAULT_REBUILD_INTERVAL: usize = 10;

/// If a step raises the frozen-context energy by more than this multiple of
/// the injected noise energy, the step size is halved and the step retried
/// with the same noise.
const SAFEGUARD_FACTOR: f64 = 10.0;
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrajectoryMode {
    /// The shape starts at the source and drifts under noise while the
    /// regularized objective anchors it to the source (point-cloud regime).
    AnchoredDrift,
    /// A template descends toward the source; recorded frames are
    /// index-reversed so frame 0 is the source and the last frame is the
    /// template (mesh and face regime).
    TemplateDescent,
}

/// Step count, per-step noise variances, sampling interval, mode, and seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub interval: usize,
    pub mode: TrajectoryMode,
    pub seed: u64,
    /// Steps between k-nearest neighborhood rebuilds; 1 forces per-step.
    pub rebuild_interval: usize,
}

impl DiffusionSchedule {
    /// Constant noise variance, the default used throughout.
    pub fn constant(steps: usize, beta: f64, interval: usize, mode: TrajectoryMode, seed: u64) -> Result<Self> {
        let s = DiffusionSchedule {
            steps,
            beta: vec![beta; steps],
            interval,
            mode,
            seed,
            rebuild_interval: DEFAULT_REBUILD_INTERVAL,
        };
        s.validate()?;
        Ok(s)
    }

    /// Linear ramp from `beta_start` at step 1 to `beta_end` at step T.
    pub fn linear(
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        interval: usize,
        mode: TrajectoryMode,
        seed: u64,
    ) -> Result<Self> {
        let beta = (0..steps)
            .map(|t| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let s = DiffusionSchedule {
            steps,
            beta,
            interval,
            mode,
            seed,
            rebuild_interval: DEFAULT_REBUILD_INTERVAL,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        if self.beta.len() != self.steps {
            return Err(Error::InvalidSchedule(format!(
                "expected {} noise variances, got {}",
                self.steps,
                self.beta.len()
            )));
        }
        if let Some(b) = self.beta.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "noise variances must be finite and >= 0, got {b}"
            )));
        }
        if self.interval == 0 || self.interval > self.steps || self.steps % self.interval != 0 {
            return Err(Error::InvalidSchedule(format!(
                "interval {} must be positive and divide the step count {}",
                self.interval, self.steps
            )));
        }
        if self.rebuild_interval == 0 {
            return Err(Error::InvalidSchedule(
                "rebuild interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which transition produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KernelKind {
    /// Gradient drift plus noise.
    Ddk,
    /// Pure Gaussian noise baseline.
    Gdk,
}

/// A recorded diffusion run: frames 0..=T plus per-frame energies.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub frames: Vec<Shape>,
    pub kernel: KernelKind,
    pub schedule: DiffusionSchedule,
    pub weights: RegularizerWeights,
    pub anchor_id: String,
    pub template_id: String,
    /// `energies[t]` is the report for `frames[t]`; frames produced by a
    /// step carry that step's frozen-context post-step report.
    pub energies: Vec<EnergyReport>,
}

impl Trajectory {
    /// Frame indices 0, i, 2i, ..., T; length T/i + 1.
    pub fn equispaced_indices(&self) -> Vec<usize> {
        (0..=self.schedule.steps / self.schedule.interval)
            .map(|m| m * self.schedule.interval)
            .collect()
    }

    pub fn equispaced_frames(&self) -> Vec<&Shape> {
        self.equispaced_indices()
            .into_iter()
            .map(|t| &self.frames[t])
            .collect()
    }
}

/// Result of one deformation step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub shape: Shape,
    /// Pre-step energy under this step's frozen context and correspondences.
    pub energy_before: EnergyReport,
    /// Post-step energy under the same frozen context.
    pub energy_after: EnergyReport,
    pub eta_used: f64,
    pub halvings: u32,
}

/// One deformation step: x <- x + eta * o + noise, where o is the negative
/// gradient of the regularized objective against `anchor` under the frozen
/// `ctx`. Noise components are drawn vertex-major from `rng` regardless of
/// step-size halving, so replay is exact.
pub fn ddk_step<R: Rng>(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
    beta_t: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    if x.is_empty() || anchor.is_empty() {
        return Err(Error::EmptyShape);
    }
    let assign: Option<ChamferAssignments> = if weights.lambda_c > 0.0 {
        Some(chamfer_assignments(x, anchor)?)
    } else {
        None
    };
    let grad = total_gradient(x, anchor, weights, ctx, assign.as_ref())?;
    if let Some(i) = grad.iter().position(|g| !(g.norm_squared().is_finite())) {
        return Err(Error::NonFiniteGradient(i));
    }

    let std = beta_t.sqrt();
    let noise: Vec<Vec3> = x
        .vertices
        .iter()
        .map(|_| Vec3::new(normal(rng), normal(rng), normal(rng)) * std)
        .collect();
    let noise_energy: f64 = noise.iter().map(|e| e.norm_squared()).sum();

    let energy_before = energy_of(x, anchor, weights, ctx, assign.as_ref())?;

    let mut eta = weights.eta;
    let mut halvings = 0;
    loop {
        let vertices: Vec<Vec3> = x
            .vertices
            .iter()
            .zip(&grad)
            .zip(&noise)
            .map(|((p, g), e)| p - eta * g + e)
            .collect();
        let candidate = x.with_vertices(vertices);
        let energy_after = energy_of(&candidate, anchor, weights, ctx, assign.as_ref())?;
        let increase = energy_after.total - energy_before.total;
        if increase <= SAFEGUARD_FACTOR * noise_energy || halvings >= MAX_HALVINGS {
            if !energy_after.total.is_finite() {
                return Err(Error::NonFiniteEnergy(0));
            }
            return Ok(StepOutcome {
                shape: candidate,
                energy_before,
                energy_after,
                eta_used: eta,
                halvings,
            });
        }
        eta /= 2.0;
        halvings += 1;
    }
}

fn energy_of(
    x: &Shape,
    anchor: &Shape,
    weights: &RegularizerWeights,
    ctx: &EnergyContext,
    assign: Option<&ChamferAssignments>,
) -> Result<EnergyReport> {
    match assign {
        Some(a) => total_energy_frozen(x, anchor, weights, ctx, a),
        None => total_energy(x, anchor, weights, ctx),
    }
}

/// Pure-noise baseline step: x <- x + noise. Consumes the same number of
/// draws per step as [`ddk_step`], so the two kernels see identical noise
/// under identical seeds.
pub fn gdk_step<R: Rng>(x: &Shape, beta_t: f64, rng: &mut R) -> Result<Shape> {
    if x.is_empty() {
        return Err(Error::EmptyShape);
    }
    let std = beta_t.sqrt();
    let vertices = x
        .vertices
        .iter()
        .map(|p| p + Vec3::new(normal(rng), normal(rng), normal(rng)) * std)
        .collect();
    Ok(x.with_vertices(vertices))
}

/// Runs the full forward process and records every frame.
///
/// AnchoredDrift starts at `source` and drifts under noise, anchored to the
/// source. TemplateDescent runs T-1 descent steps from `template` toward
/// `source`, then stores the states index-reversed with frame 0 set to the
/// source itself.
pub fn run_trajectory(
    source: &Shape,
    template: &Shape,
    weights: &RegularizerWeights,
    schedule: &DiffusionSchedule,
) -> Result<Trajectory> {
    schedule.validate()?;
    weights.validate()?;
    if source.is_empty() || template.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let t_total = schedule.steps;

    let (start, anchor) = match schedule.mode {
        TrajectoryMode::AnchoredDrift => (source.clone(), source),
        TrajectoryMode::TemplateDescent => (template.clone(), source),
    };
    let descent_steps = match schedule.mode {
        TrajectoryMode::AnchoredDrift => t_total,
        TrajectoryMode::TemplateDescent => t_total - 1,
    };

    let mut state = start;
    let mut ctx = EnergyContext::build(&state, weights, DIFFUSION_KNN)?;
    let mut states = Vec::with_capacity(t_total + 1);
    let mut reports = Vec::with_capacity(t_total + 1);
    reports.push(total_energy(&state, anchor, weights, &ctx)?);
    states.push(state.clone());

    for step in 0..descent_steps {
        let needs_knn_rebuild = state.kind == ShapeKind::PointCloud
            || ctx.knn_neighborhood.is_some();
        if step > 0 {
            if needs_knn_rebuild && step % schedule.rebuild_interval == 0 {
                ctx = EnergyContext::build(&state, weights, DIFFUSION_KNN)?;
            } else {
                ctx.refresh(&state, weights)?;
            }
        }
        let beta_t = schedule.beta[step];
        let out = ddk_step(&state, anchor, weights, &ctx, beta_t, &mut rng).map_err(|e| {
            match e {
                Error::NonFiniteEnergy(_) => Error::NonFiniteEnergy(step + 1),
                other => other,
            }
        })?;
        state = out.shape;
        states.push(state.clone());
        reports.push(out.energy_after);
    }

    let frames;
    let energies;
    match schedule.mode {
        TrajectoryMode::AnchoredDrift => {
            frames = states;
            energies = reports;
        }
        TrajectoryMode::TemplateDescent => {
            // reverse so the template sits at the high-noise end, then put
            // the exact source at frame 0; the terminal descent state
            // becomes frame 1
            states.reverse();
            reports.reverse();
            let mut f = Vec::with_capacity(t_total + 1);
            let mut r = Vec::with_capacity(t_total + 1);
            f.push(source.clone());
            // the source may be a raw point cloud; skip edge-based terms
            // in its report if it has no connectivity
            let mut w0 = *weights;
            if source.edges.is_none() {
                w0.lambda_e = 0.0;
            }
            let source_ctx = EnergyContext::build(source, &w0, DIFFUSION_KNN)?;
            r.push(total_energy(source, source, &w0, &source_ctx)?);
            f.extend(states);
            r.extend(reports);
            frames = f;
            energies = r;
        }
    }

    debug_assert_eq!(frames.len(), t_total + 1);
    Ok(Trajectory {
        frames,
        kernel: KernelKind::Ddk,
        schedule: schedule.clone(),
        weights: *weights,
        anchor_id: String::new(),
        template_id: String::new(),
        energies,
    })
}

/// Runs the pure-noise baseline from the source for the same step count,
/// recording the same per-frame energy reports as the deformation kernel so
/// the two are directly comparable under identical seeds.
pub fn run_baseline_trajectory(
    source: &Shape,
    weights: &RegularizerWeights,
    schedule: &DiffusionSchedule,
) -> Result<Trajectory> {
    schedule.validate()?;
    weights.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut state = source.clone();
    let mut ctx = EnergyContext::build(&state, weights, DIFFUSION_KNN)?;
    let mut frames = Vec::with_capacity(schedule.steps + 1);
    let mut energies = Vec::with_capacity(schedule.steps + 1);
    frames.push(state.clone());
    energies.push(total_energy(&state, source, weights, &ctx)?);
    for step in 0..schedule.steps {
        state = gdk_step(&state, schedule.beta[step], &mut rng)?;
        if step % schedule.rebuild_interval == 0 {
            ctx = EnergyContext::build(&state, weights, DIFFUSION_KNN)?;
        } else {
            ctx.refresh(&state, weights)?;
        }
        let report = total_energy(&state, source, weights, &ctx)?;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteEnergy(step + 1));
        }
        frames.push(state.clone());
        energies.push(report);
    }
    Ok(Trajectory {
        frames,
        kernel: KernelKind::Gdk,
        schedule: schedule.clone(),
        weights: *weights,
        anchor_id: String::new(),
        template_id: String::new(),
        energies,
    })
}

/// Builds an average shape from a dataset: starting from a unit Gaussian
/// cloud, repeatedly pick a dataset shape and take one noiseless deformation
/// step toward it. The step size halves every `steps / 20` iterations
/// (cyclic decrease), so late steps anneal the cloud onto the attractor
/// shared by the dataset.
pub fn average_shape(
    dataset: &[Shape],
    npoints: usize,
    steps: usize,
    weights: &RegularizerWeights,
    seed: u64,
) -> Result<Shape> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if npoints == 0 {
        return Err(Error::EmptyShape);
    }
    weights.validate()?;
    let resampled: Vec<Shape> = dataset
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::EmptyShape);
            }
            Ok(Shape::point_cloud(
                (0..npoints).map(|i| s.vertices[i % s.len()]).collect(),
            ))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = crate::primitives::gaussian_cloud(npoints, 1.0, seed.wrapping_add(1));
    let cycle = (steps / 20).max(1);
    let mut ctx = EnergyContext::build(&cloud, weights, DIFFUSION_KNN)?;
    for step in 0..steps {
        if step > 0 {
            if ctx.knn_neighborhood.is_some() && step % DEFAULT_REBUILD_INTERVAL == 0 {
                ctx = EnergyContext::build(&cloud, weights, DIFFUSION_KNN)?;
            } else {
                ctx.refresh(&cloud, weights)?;
            }
        }
        // round-robin through the dataset: the cyclic attractor of the
        // alternating descent is centered on the dataset average at every
        // step size, so annealing converges there instead of freezing at a
        // random draw
        let anchor = &resampled[step % resampled.len()];
        let w = RegularizerWeights {
            eta: weights.eta * 0.5f64.powi((step / cycle) as i32),
            ..*weights
        };
        cloud = ddk_step(&cloud, anchor, &w, &ctx, 0.0, &mut rng)?.shape;
    }
    Ok(cloud)
}

/// Reorders a point cloud so that index `j` holds the source point optimally
/// matched to `reference.vertices[j]` (minimum total squared distance over
/// all one-to-one pairings).
///
/// Point clouds carry no canonical vertex order, but index-aligned frame
/// pairs are exactly what the imitation model trains on. A descent
/// trajectory keeps the template's point order in every generated frame
/// while the source keeps its own, so the terminal pair would otherwise ask
/// the model to learn an arbitrary index permutation. Aligning the source's
/// order to a nearby frame removes that jump without changing the shape.
pub fn align_point_order(source: &Shape, reference: &Shape) -> Result<Shape> {
    if source.is_empty() || reference.is_empty() {
        return Err(Error::EmptyShape);
    }
    if source.faces.is_some() || source.edges.is_some() {
        return Err(Error::InvalidShape(
            "point-order alignment is only defined for pure point clouds".into(),
        ));
    }
    if source.len() != reference.len() {
        return Err(Error::VertexCountMismatch(source.len(), reference.len()));
    }
    let n = source.len();
    let cost: Vec<f64> = reference
        .vertices
        .iter()
        .flat_map(|r| source.vertices.iter().map(move |s| (r - s).norm_squared()))
        .collect();
    let (assign, _) = crate::assignment::min_cost_assignment(&cost, n);
    Ok(source.with_vertices(assign.iter().map(|&j| source.vertices[j]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::chamfer;
    use crate::primitives::{icosphere, sample_ellipsoid};
    use crate::shape::Shape;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn schedule_validation() {
        assert!(DiffusionSchedule::constant(500, 0.05, 50, TrajectoryMode::AnchoredDrift, 1).is_ok());
        assert!(DiffusionSchedule::constant(0, 0.05, 1, TrajectoryMode::AnchoredDrift, 1).is_err());
        assert!(DiffusionSchedule::constant(500, -0.1, 50, TrajectoryMode::AnchoredDrift, 1).is_err());
        assert!(DiffusionSchedule::constant(500, 0.05, 33, TrajectoryMode::AnchoredDrift, 1).is_err());
        let mut s = DiffusionSchedule::constant(10, 0.05, 5, TrajectoryMode::AnchoredDrift, 1).unwrap();
        s.beta.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = DiffusionSchedule::linear(5, 0.0, 0.4, 5, TrajectoryMode::AnchoredDrift, 1).unwrap();
        assert_eq!(s.beta[0], 0.0);
        assert!((s.beta[4] - 0.4).abs() < 1e-15);
        assert!((s.beta[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn ddk_step_identity_when_noise_and_eta_vanish() {
        // eta > 0 is required by validate(); a direct weights value probes
        // the kernel's behavior at the eta -> 0 limit
        let x = sample_ellipsoid(30, v(1.0, 0.8, 0.5), 3);
        let w = RegularizerWeights {
            eta: 0.0,
            ..RegularizerWeights::point_cloud()
        };
        let ctx = EnergyContext::build(&x, &w, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ddk_step(&x, &x, &w, &ctx, 0.0, &mut rng).unwrap();
        assert_eq!(out.shape.vertices, x.vertices);
    }

    #[test]
    fn align_point_order_recovers_a_permutation() {
        let reference = Shape::point_cloud(vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(0.0, 0.0, 1.0),
        ]);
        // the same points, shuffled and slightly perturbed
        let source = Shape::point_cloud(vec![
            v(0.01, 0.99, 0.0),
            v(0.0, 0.01, 1.02),
            v(0.02, -0.01, 0.0),
            v(0.98, 0.0, 0.01),
        ]);
        let aligned = align_point_order(&source, &reference).unwrap();
        for (a, r) in aligned.vertices.iter().zip(&reference.vertices) {
            assert!((a - r).norm() < 0.05);
        }
        // alignment permutes, never moves, points
        let mut orig: Vec<_> = source.vertices.iter().map(|p| format!("{p:?}")).collect();
        let mut perm: Vec<_> = aligned.vertices.iter().map(|p| format!("{p:?}")).collect();
        orig.sort();
        perm.sort();
        assert_eq!(orig, perm);

        let shorter = Shape::point_cloud(vec![v(0.0, 0.0, 0.0)]);
        assert!(align_point_order(&shorter, &reference).is_err());
        let mesh = icosphere(0).unwrap();
        assert!(align_point_order(&mesh, &mesh).is_err());
    }

    #[test]
    fn ddk_step_single_point_hand_case() {
        let x = Shape::point_cloud(vec![v(1.0, 0.0, 0.0)]);
        let anchor = Shape::point_cloud(vec![v(0.0, 0.0, 0.0)]);
        let w = RegularizerWeights {
            lambda_n: 0.0,
            lambda_l: 0.0,
            lambda_e: 0.0,
            lambda_p: 0.0,
            lambda_c: 1.0,
            eta: 0.1,
        };
        let ctx = EnergyContext::build(&x, &w, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ddk_step(&x, &anchor, &w, &ctx, 0.0, &mut rng).unwrap();
        assert!((out.shape.vertices[0] - v(0.6, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(out.halvings, 0);
    }

    #[test]
    fn noiseless_step_never_increases_frozen_energy() {
        // mesh profile on a perturbed sphere descending to an ellipsoid
        let mut x = icosphere(2).unwrap();
        for (i, p) in x.vertices.iter_mut().enumerate() {
            *p *= 1.0 + 0.1 * ((i as f64) * 0.7).sin();
        }
        let anchor = sample_ellipsoid(300, v(1.0, 0.6, 0.4), 9);
        let w = RegularizerWeights::mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = x;
        for _ in 0..5 {
            let ctx = EnergyContext::build(&state, &w, DIFFUSION_KNN).unwrap();
            let out = ddk_step(&state, &anchor, &w, &ctx, 0.0, &mut rng).unwrap();
            assert!(
                out.energy_after.total <= out.energy_before.total + 1e-12,
                "energy rose from {} to {}",
                out.energy_before.total,
                out.energy_after.total
            );
            state = out.shape;
        }
    }

    #[test]
    fn gdk_identity_and_replay() {
        let x = sample_ellipsoid(50, v(1.0, 0.7, 0.5), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let same = gdk_step(&x, 0.0, &mut rng).unwrap();
        assert_eq!(same.vertices, x.vertices);

        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = gdk_step(&x, 0.05, &mut r1).unwrap();
        let b = gdk_step(&x, 0.05, &mut r2).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_ne!(a.vertices, x.vertices);
    }

    #[test]
    fn gdk_accumulated_variance_matches_schedule() {
        // 500 steps at variance 0.05 accumulate to 25 per axis
        let n = 10_000;
        let x = Shape::point_cloud(vec![Vec3::zeros(); n]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = x;
        for _ in 0..500 {
            state = gdk_step(&state, 0.05, &mut rng).unwrap();
        }
        let var: f64 = state
            .vertices
            .iter()
            .map(|p| p.norm_squared())
            .sum::<f64>()
            / (3 * n) as f64;
        assert!(
            (var - 25.0).abs() < 0.05 * 25.0,
            "per-axis variance {var}, expected ~25"
        );
    }

    #[test]
    fn trajectory_deterministic_and_counts() {
        let source = sample_ellipsoid(64, v(1.0, 0.7, 0.4), 5);
        let w = RegularizerWeights::point_cloud();
        let sched = DiffusionSchedule::constant(20, 0.05, 5, TrajectoryMode::AnchoredDrift, 7).unwrap();
        let a = run_trajectory(&source, &source, &w, &sched).unwrap();
        let b = run_trajectory(&source, &source, &w, &sched).unwrap();
        assert_eq!(a.frames.len(), 21);
        assert_eq!(a.energies.len(), 21);
        assert_eq!(a.frames[0].vertices, source.vertices);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.vertices, fb.vertices);
        }
        assert_eq!(a.equispaced_indices(), vec![0, 5, 10, 15, 20]);
        assert_eq!(a.equispaced_frames().len(), 5);
    }

    #[test]
    fn template_descent_frame_layout_and_connectivity() {
        let template = icosphere(1).unwrap();
        let source = sample_ellipsoid(120, v(1.0, 0.6, 0.4), 6);
        let w = RegularizerWeights::mesh();
        let sched =
            DiffusionSchedule::constant(10, 0.0, 5, TrajectoryMode::TemplateDescent, 8).unwrap();
        let traj = run_trajectory(&source, &template, &w, &sched).unwrap();
        assert_eq!(traj.frames.len(), 11);
        // frame 0 is the exact source; frame T is the exact template
        assert_eq!(traj.frames[0].vertices, source.vertices);
        assert_eq!(traj.frames[10].vertices, template.vertices);
        // mesh connectivity persists across all template-side frames
        for f in &traj.frames[1..] {
            assert_eq!(f.faces, template.faces);
            assert_eq!(f.len(), template.len());
        }
        // descent brings frame 1 closer to the source than the template was
        let d1 = chamfer(&traj.frames[1], &source).unwrap();
        let d_t = chamfer(&template, &source).unwrap();
        assert!(d1 < d_t, "descent did not approach the source: {d1} vs {d_t}");
    }

    #[test]
    fn drift_sustains_noise_but_stays_anchored() {
        // anchored drift reaches a noised stationary state: far from the
        // source, yet far closer than the unconstrained noise baseline
        let source = sample_ellipsoid(128, v(1.0, 0.7, 0.5), 12);
        let w = RegularizerWeights::point_cloud();
        let steps = 50;
        let sched =
            DiffusionSchedule::constant(steps, 0.05, 10, TrajectoryMode::AnchoredDrift, 21).unwrap();
        let traj = run_trajectory(&source, &source, &w, &sched).unwrap();
        let ddk_d = chamfer(&traj.frames[steps], &source).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut baseline = source.clone();
        for _ in 0..steps {
            baseline = gdk_step(&baseline, 0.05, &mut rng).unwrap();
        }
        let gdk_d = chamfer(&baseline, &source).unwrap();

        // one step of variance-0.05 noise alone moves the per-vertex
        // squared distance by about 3 * beta; the stationary state keeps
        // at least that much displacement
        assert!(ddk_d > 0.5 * source.len() as f64 * 3.0 * 0.05, "drift collapsed: {ddk_d}");
        assert!(ddk_d < 0.5 * gdk_d, "drift unconstrained: {ddk_d} vs baseline {gdk_d}");
    }

    #[test]
    fn baseline_trajectory_matches_manual_loop() {
        let source = sample_ellipsoid(40, v(1.0, 0.7, 0.5), 14);
        let w = RegularizerWeights::point_cloud();
        let sched =
            DiffusionSchedule::constant(10, 0.05, 5, TrajectoryMode::AnchoredDrift, 33).unwrap();
        let traj = run_baseline_trajectory(&source, &w, &sched).unwrap();
        assert_eq!(traj.kernel, KernelKind::Gdk);
        assert_eq!(traj.frames.len(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut state = source;
        for t in 1..=10 {
            state = gdk_step(&state, 0.05, &mut rng).unwrap();
            assert_eq!(traj.frames[t].vertices, state.vertices);
        }
    }

    #[test]
    fn average_shape_two_point_midpoint() {
        let a = Shape::point_cloud(vec![v(-1.0, 0.0, 0.0)]);
        let b = Shape::point_cloud(vec![v(1.0, 0.0, 0.0)]);
        let w = RegularizerWeights {
            lambda_n: 0.0,
            lambda_l: 0.0,
            lambda_e: 0.0,
            lambda_p: 0.0,
            lambda_c: 1.0,
            eta: 1.0,
        };
        let result = average_shape(&[a, b], 1, 500, &w, 3).unwrap();
        assert!(
            result.vertices[0].norm() < 1e-2,
            "expected midpoint, got {:?}",
            result.vertices[0]
        );
    }

    #[test]
    fn average_shape_single_anchor_descends_onto_it() {
        let p = sample_ellipsoid(200, v(1.0, 0.7, 0.5), 17);
        let w = RegularizerWeights::point_cloud();
        let npoints = 200;
        let result = average_shape(std::slice::from_ref(&p), npoints, 300, &w, 4).unwrap();
        let d = chamfer(&result, &p).unwrap();
        let bound = 1e-2 * p.bbox_diagonal().powi(2) * npoints as f64;
        assert!(d < bound, "chamfer {d} above bound {bound}");
    }

    #[test]
    fn average_shape_rejects_empty_dataset() {
        let w = RegularizerWeights::point_cloud();
        assert!(matches!(
            average_shape(&[], 10, 10, &w, 1),
            Err(Error::EmptyDataset)
        ));
    }
}
