//! Camouflage texture optimization against the detector's classifications
//! of all dense proposals.

use std::path::{Path, PathBuf};

use cac_autodiff::{Graph, NodeId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{self, BBox};
use crate::camera::ViewPose;
use crate::detector::{DetectorModel, Pass, Proposal};
use crate::env::{sample_env, EnvCondition, EnvDistribution};
use crate::error::{Error, Result};
use crate::io;
use crate::mesh::Mesh;
use crate::optim::{Adam, AdamConfig};
use crate::render;
use crate::rng::{self, Rng};
use crate::scenes::{ground_truth_box, BACKGROUND};
use crate::texture::TextureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Every proposal towards `target_class`.
    Targeted,
    /// Every proposal towards background.
    Disappearance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub target_class: usize,
    /// Class of the attacked object.
    pub true_class: usize,
    pub top_n: usize,
    pub iterations: usize,
    /// Environment samples per update.
    pub env_samples: usize,
    pub optimizer: AdamConfig,
    pub mode: AttackMode,
    /// Texture checkpoint interval in iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target_class: 2,
            true_class: 1,
            top_n: 300,
            iterations: 800,
            env_samples: 8,
            optimizer: AdamConfig::default(),
            mode: AttackMode::Targeted,
            checkpoint_every: 100,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.top_n == 0 || self.env_samples == 0 {
            return bad("top_n and env_samples must be at least 1".into());
        }
        if self.true_class == BACKGROUND || self.true_class > num_classes {
            return bad(format!("true class {} outside 1..={num_classes}", self.true_class));
        }
        if self.mode == AttackMode::Targeted {
            if self.target_class > num_classes {
                return bad(format!("target class {} outside 0..={num_classes}", self.target_class));
            }
            if self.target_class == self.true_class {
                return bad("target class equals the object's true class".into());
            }
        }
        if !(self.optimizer.step_size >= 0.0) {
            return bad("step size must be non-negative".into());
        }
        Ok(())
    }

    /// Label every proposal is pushed towards.
    pub fn goal_class(&self) -> usize {
        match self.mode {
            AttackMode::Targeted => self.target_class,
            AttackMode::Disappearance => BACKGROUND,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean loss over the samples used (NaN when skipped).
    pub loss: f64,
    /// Mean probability of the goal class over used proposals.
    pub mean_goal_prob: f64,
    pub samples_used: usize,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct AttackState {
    pub texture: TextureMap,
    pub initial: TextureMap,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    adam: Adam,
}

impl AttackState {
    pub fn new(initial: &TextureMap, optimizer: AdamConfig) -> Self {
        Self {
            texture: initial.clone(),
            initial: initial.clone(),
            iteration: 0,
            history: Vec::new(),
            adam: Adam::new(optimizer, &[initial.rgb.len()]),
        }
    }

    /// Texels in range and every fixed texel bit-equal to its initial value.
    pub fn invariants_hold(&self) -> bool {
        self.texture.rgb.iter().all(|v| (0.0..=1.0).contains(v))
            && self.texture.trainable.iter().enumerate().all(|(t, &tr)| tr || (0..3).all(|k| self.texture.rgb[3 * t + k].to_bits() == self.initial.rgb[3 * t + k].to_bits()))
    }
}

/// Mean cross-entropy of every proposal's classification against `goal`.
pub fn dense_proposal_loss(model: &DetectorModel, g: &mut Graph, pass: &Pass, proposals: &[Proposal], goal: usize) -> Result<NodeId> {
    if proposals.is_empty() {
        return Err(Error::NoProposals);
    }
    let bxs: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    let logits = model.roi_logits(g, pass, &bxs)?;
    Ok(g.cross_entropy(logits, vec![goal; proposals.len()], None)?)
}

/// [`dense_proposal_loss`] towards background.
pub fn disappearance_loss(model: &DetectorModel, g: &mut Graph, pass: &Pass, proposals: &[Proposal]) -> Result<NodeId> {
    dense_proposal_loss(model, g, pass, proposals, BACKGROUND)
}

/// Differentiable render, proposals and loss of one environment sample.
pub struct SampleGraph {
    pub graph: Graph,
    pub texture: NodeId,
    pub image: NodeId,
    pub loss: NodeId,
    pub logits: NodeId,
    pub proposals: Vec<Proposal>,
    /// Class the top proposal over the object was assigned (diagnostics).
    pub proposal_labels: Vec<usize>,
}

/// Builds the loss graph for `env`, or `None` when no proposal overlaps
/// the object.
pub fn sample_graph(model: &DetectorModel, mesh: &Mesh, texture: &TextureMap, env: &EnvCondition, cfg: &AttackConfig, rng: &mut Rng) -> Result<Option<SampleGraph>> {
    let size = model.arch.input_size;
    let Some(gt) = ground_truth_box(mesh, &ViewPose::from_env(env), size) else {
        return Ok(None);
    };
    let mut g = Graph::new();
    let t = g.input("texture", texture.to_tensor(), true);
    let image = render::render_graph(&mut g, t, mesh, env, size, rng)?;
    let pass = model.forward(&mut g, image, false)?;
    let proposals = model.proposals(&g, &pass, cfg.top_n).proposals;
    if !proposals.iter().any(|p| boxes::area(&intersection(&p.bbox, &gt)) > 0.0) {
        return Ok(None);
    }
    let bxs: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    let logits = model.roi_logits(&mut g, &pass, &bxs)?;
    let k = model.arch.num_classes + 1;
    let proposal_labels = g.value(logits).data().chunks(k).map(argmax).collect();
    let loss = g.cross_entropy(logits, vec![cfg.goal_class(); proposals.len()], None)?;
    Ok(Some(SampleGraph {
        graph: g,
        texture: t,
        image,
        loss,
        logits,
        proposals,
        proposal_labels,
    }))
}

fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

fn intersection(a: &BBox, b: &BBox) -> BBox {
    [a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]
}

struct SampleOutcome {
    loss: f64,
    goal_prob: f64,
    grad: Vec<f32>,
}

fn run_sample(model: &DetectorModel, mesh: &Mesh, texture: &TextureMap, dist: &EnvDistribution, cfg: &AttackConfig, seed: u64, index: u64) -> Result<Option<SampleOutcome>> {
    let mut r = rng::substream(seed, "goal-prob", index);
    let env = sample_env(dist, None, &mut r);
    sample_outcome(model, mesh, texture, &env, cfg, &mut r)
}

fn sample_outcome(model: &DetectorModel, mesh: &Mesh, texture: &TextureMap, env: &EnvCondition, cfg: &AttackConfig, r: &mut Rng) -> Result<Option<SampleOutcome>> {
    let Some(sg) = sample_graph(model, mesh, texture, env, cfg, r)? else {
        return Ok(None);
    };
    let loss = sg.graph.value(sg.loss).item() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            stage: format!("attack loss (env {env:?})"),
        });
    }
    let k = model.arch.num_classes + 1;
    let probs = crate::detector::softmax_rows(sg.graph.value(sg.logits).data(), k);
    let goal = cfg.goal_class();
    let goal_prob = probs.chunks(k).map(|row| row[goal] as f64).sum::<f64>() / sg.proposals.len() as f64;
    let grad = sg.graph.backward(sg.loss)?.get(sg.texture).into_data();
    Ok(Some(SampleOutcome { loss, goal_prob, grad }))
}

/// One update: `B` environment samples, mean gradient, one optimizer step,
/// clip and restore of fixed texels.
pub fn cac_iteration(state: &mut AttackState, model: &DetectorModel, mesh: &Mesh, dist: &EnvDistribution, cfg: &AttackConfig, seed: u64) -> Result<IterationRecord> {
    let b = cfg.env_samples as u64;
    let t = state.iteration as u64;
    let texture = &state.texture;
    let outcomes: Vec<Option<SampleOutcome>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, "attack-sample", t * b + i);
            let env = sample_env(dist, None, &mut r);
            sample_outcome(model, mesh, texture, &env, cfg, &mut r)
        })
        .collect::<Result<_>>()?;
    let used: Vec<&SampleOutcome> = outcomes.iter().flatten().collect();
    let record = if used.is_empty() {
        IterationRecord {
            iteration: state.iteration,
            loss: f64::NAN,
            mean_goal_prob: f64::NAN,
            samples_used: 0,
            skipped: true,
        }
    } else {
        let n = used.len() as f64;
        let mut grad = vec![0.0f64; state.texture.rgb.len()];
        for o in &used {
            for (a, &v) in grad.iter_mut().zip(&o.grad) {
                *a += v as f64;
            }
        }
        let grad: Vec<f32> = grad
            .iter()
            .enumerate()
            .map(|(i, &v)| if state.texture.trainable[i / 3] { (v / n) as f32 } else { 0.0 })
            .collect();
        state.adam.step(&mut [&mut state.texture.rgb], &[Some(&grad)]);
        state.texture.clip();
        let initial = state.initial.clone();
        state.texture.restore_fixed(&initial);
        IterationRecord {
            iteration: state.iteration,
            loss: used.iter().map(|o| o.loss).sum::<f64>() / n,
            mean_goal_prob: used.iter().map(|o| o.goal_prob).sum::<f64>() / n,
            samples_used: used.len(),
            skipped: false,
        }
    };
    state.iteration += 1;
    state.history.push(record);
    Ok(record)
}

/// Called after every iteration; returning an error aborts the run.
pub type IterationHook<'a> = dyn FnMut(&AttackState) -> Result<()> + 'a;

/// Runs `cfg.iterations` updates from `initial`.
pub fn run_cac(
    mesh: &Mesh,
    initial: &TextureMap,
    model: &DetectorModel,
    dist: &EnvDistribution,
    cfg: &AttackConfig,
    seed: u64,
    mut hook: Option<&mut IterationHook>,
) -> Result<AttackState> {
    cfg.validate(model.arch.num_classes)?;
    let mut state = AttackState::new(initial, cfg.optimizer);
    for _ in 0..cfg.iterations {
        cac_iteration(&mut state, model, mesh, dist, cfg, seed)?;
        if let Some(h) = hook.as_deref_mut() {
            h(&state)?;
        }
    }
    Ok(state)
}

/// Mean goal-class probability over fresh environment samples.
pub fn mean_goal_probability(model: &DetectorModel, mesh: &Mesh, texture: &TextureMap, dist: &EnvDistribution, cfg: &AttackConfig, samples: usize, seed: u64) -> Result<f64> {
    let outs: Vec<Option<SampleOutcome>> = (0..samples as u64).into_par_iter().map(|i| run_sample(model, mesh, texture, dist, cfg, seed, i)).collect::<Result<_>>()?;
    let used: Vec<f64> = outs.iter().flatten().map(|o| o.goal_prob).collect();
    if used.is_empty() {
        return Err(Error::UndefinedMetric("no sample overlaps the object".into()));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

/// Artifacts of an attack run: config snapshot, texture checkpoints
/// (raw and PNG) and the loss history.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path, cfg: &AttackConfig, extra: &serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let snapshot = serde_json::json!({ "attack": cfg, "run": extra });
        let text = serde_json::to_string_pretty(&snapshot).expect("config serializes");
        io::write_atomic(&path.join("config.json"), text.as_bytes())?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn checkpoint(&self, state: &AttackState) -> Result<()> {
        io::save_texture(&self.path, &format!("texture_{:05}", state.iteration), &state.texture)
    }

    pub fn finish(&self, state: &AttackState) -> Result<()> {
        io::save_texture(&self.path, "final", &state.texture)?;
        self.write_history(&state.history)
    }

    pub fn write_history(&self, history: &[IterationRecord]) -> Result<()> {
        io::write_csv(&self.path.join("loss.csv"), |w| {
            w.write_record(["iteration", "loss", "mean_target_prob", "samples_used", "skipped"])?;
            for r in history {
                w.write_record([
                    r.iteration.to_string(),
                    format!("{:.6}", r.loss),
                    format!("{:.6}", r.mean_goal_prob),
                    r.samples_used.to_string(),
                    r.skipped.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

/// Texture tensor gradient of the dense loss for a fixed environment;
/// exposed for gradient checks.
pub fn fixed_env_graph(model: &DetectorModel, mesh: &Mesh, texture: &TextureMap, env: &EnvCondition, cfg: &AttackConfig, seed: u64) -> Result<Option<SampleGraph>> {
    sample_graph(model, mesh, texture, env, cfg, &mut rng::stream(seed, "fixed-env"))
}
