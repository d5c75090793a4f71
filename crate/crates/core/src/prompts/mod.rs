//! Phase II: dual prompt pools, per-client selection, prompt tuning on a
//! frozen backbone and group-aware aggregation.
//!
//! A text prompt is `L_p` extra rows pooled together with each node's
//! summary tokens; a graph prompt is a bias added to every node's input
//! features. Nodes are classified by the cosine between their prompted
//! graph embedding and per-class anchors, the mean normalized prompted
//! text embedding of the labeled nodes of each class.

mod run;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use crate::alignment::LocalContext;
use crate::checksum::checksum_values;
use crate::encoders::{
    graph_backward_with_input, graph_forward_on, EncoderParams, ForwardCache, NORM_EPS,
};
use crate::error::{Error, Result};
use crate::prototypes::GlobalTokenSet;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;

pub use run::{run_finetuning, FinetunedBundle};

/// Standard deviation of the Gaussian prompt initialization.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Text,
    Graph,
}

/// `M` prompts of one channel. Text prompts are `L_p x d`; graph prompts
/// are stored as `1 x d_in` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool<F> {
    pub channel: Channel,
    pub prompts: Vec<Array2<F>>,
}

impl<F: Scalar> PromptPool<F> {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn checksums(&self) -> Vec<u64> {
        self.prompts
            .iter()
            .map(|p| checksum_values(p.iter()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptShape {
    pub pool_size: usize,
    pub prompt_len: usize,
    pub d: usize,
    pub d_in: usize,
}

/// Pools seeded from the global tokens with the default jitter.
pub fn init_pools<F: Scalar>(
    tokens: &GlobalTokenSet<F>,
    shape: PromptShape,
    seed: u64,
) -> Result<(PromptPool<F>, PromptPool<F>)> {
    init_pools_with_jitter(tokens, shape, INIT_STD, seed)
}

/// Text prompt `m` tiles token `m mod |tokens|` over `L_p` rows plus
/// Gaussian jitter; graph prompts are pure Gaussian noise. Without tokens
/// both channels are Gaussian.
pub fn init_pools_with_jitter<F: Scalar>(
    tokens: &GlobalTokenSet<F>,
    shape: PromptShape,
    jitter: f64,
    seed: u64,
) -> Result<(PromptPool<F>, PromptPool<F>)> {
    if shape.pool_size == 0 {
        return Err(Error::Config("prompt pool size must be >= 1".into()));
    }
    if let Some(t) = tokens.tokens.iter().find(|t| t.vector.len() != shape.d) {
        return Err(Error::Shape(format!(
            "token width {} != {}",
            t.vector.len(),
            shape.d
        )));
    }
    let mut text_rng = stream(seed, &[tag::PROMPTS, 0]);
    let mut graph_rng = stream(seed, &[tag::PROMPTS, 1]);
    let text_noise = Normal::new(0.0, jitter).map_err(|e| Error::Config(e.to_string()))?;
    let init = Normal::new(0.0, INIT_STD).expect("constant std is valid");
    let text = (0..shape.pool_size)
        .map(|m| {
            Array2::from_shape_fn((shape.prompt_len, shape.d), |(_, j)| {
                if tokens.is_empty() {
                    F::of(init.sample(&mut text_rng))
                } else {
                    let base = tokens.tokens[m % tokens.len()].vector[j];
                    base + F::of(text_noise.sample(&mut text_rng))
                }
            })
        })
        .collect();
    let graph = (0..shape.pool_size)
        .map(|_| {
            Array2::from_shape_simple_fn((1, shape.d_in), || F::of(init.sample(&mut graph_rng)))
        })
        .collect();
    Ok((
        PromptPool {
            channel: Channel::Text,
            prompts: text,
        },
        PromptPool {
            channel: Channel::Graph,
            prompts: graph,
        },
    ))
}

/// Prompted embeddings of every node of a client.
#[derive(Debug, Clone)]
pub struct Prompted<F> {
    /// Graph forward over `X + phi_G`; `cache.z` is `Z^G'`.
    pub cache: ForwardCache<F>,
    /// `Z^T'`, one pooled row per node.
    pub text: Array2<F>,
}

/// Runs the frozen backbone and text pooling with prompts attached.
pub fn apply_prompts<F: Scalar>(
    ctx: &LocalContext<F>,
    backbone: &EncoderParams<F>,
    phi_t: ArrayView2<'_, F>,
    phi_g: ArrayView1<'_, F>,
) -> Result<Prompted<F>> {
    let features = &ctx.inputs.features;
    if phi_g.len() != features.ncols() {
        return Err(Error::Shape(format!(
            "graph prompt width {} != {}",
            phi_g.len(),
            features.ncols()
        )));
    }
    if phi_t.ncols() != ctx.text.ncols() {
        return Err(Error::Shape(format!(
            "text prompt width {} != {}",
            phi_t.ncols(),
            ctx.text.ncols()
        )));
    }
    let cache = graph_forward_on(backbone, &ctx.inputs, &(features + &phi_g))?;
    let text = prompted_text(ctx, phi_t);
    Ok(Prompted { cache, text })
}

fn norm<F: Scalar>(v: ArrayView1<'_, F>) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

/// Row divided by its norm; zero rows stay zero.
fn unit<F: Scalar>(v: ArrayView1<'_, F>) -> (Array1<F>, F) {
    let n = norm(v);
    if n.as_f64() <= NORM_EPS {
        (Array1::zeros(v.len()), n)
    } else {
        (v.mapv(|x| x / n), n)
    }
}

/// Mean normalized text embedding of the `labeled` nodes of each class.
pub fn text_anchors<F: Scalar>(
    text: &Array2<F>,
    labels: &[u32],
    labeled: &[usize],
    classes: usize,
) -> Result<Array2<F>> {
    let mut sums = Array2::<F>::zeros((classes, text.ncols()));
    let mut counts = vec![0usize; classes];
    for &v in labeled {
        let c = labels[v] as usize;
        counts[c] += 1;
        let (u, _) = unit(text.row(v));
        let mut row = sums.row_mut(c);
        row += &u;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    for (mut row, &n) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        row.mapv_inplace(|x| x / F::of(n as f64));
    }
    Ok(sums)
}

fn cos<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> f64 {
    crate::prototypes::cosine(a, b)
}

/// Fraction of `split` nodes whose highest-cosine class mean is their
/// label. Ties go to the lowest class id.
pub fn evaluate<F: Scalar>(
    z: &Array2<F>,
    labels: &[u32],
    split: &[usize],
    means: &Array2<F>,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Shape("evaluation split is empty".into()));
    }
    let correct = split
        .iter()
        .filter(|&&v| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, m) in means.rows().into_iter().enumerate() {
                let s = cos(z.row(v), m);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0 == labels[v] as usize
        })
        .count();
    Ok(correct as f64 / split.len() as f64)
}

/// Labels, the labeled nodes and the classifier sharpness for one client.
#[derive(Debug, Clone, Copy)]
pub struct TaskSpec<'a> {
    pub labels: &'a [u32],
    pub train: &'a [usize],
    pub classes: usize,
    pub sharpness: f64,
}

/// Accuracy on `split` with the given prompts attached.
pub fn prompted_accuracy<F: Scalar>(
    ctx: &LocalContext<F>,
    backbone: &EncoderParams<F>,
    task: &TaskSpec<'_>,
    phi_t: ArrayView2<'_, F>,
    phi_g: ArrayView1<'_, F>,
    split: &[usize],
) -> Result<f64> {
    let p = apply_prompts(ctx, backbone, phi_t, phi_g)?;
    let anchors = text_anchors(&p.text, task.labels, task.train, task.classes)?;
    evaluate(&p.cache.z, task.labels, split, &anchors)
}

#[derive(Debug, Clone)]
pub struct PromptGrads<F> {
    pub loss: F,
    /// Same shape as the text prompt; every row is identical.
    pub text: Array2<F>,
    pub graph: Array1<F>,
}

/// Cross-entropy of the cosine-softmax classifier over the labeled nodes,
/// with exact gradients w.r.t. both prompts. The backbone and the text
/// table only receive reads.
pub fn prompt_loss_and_grads<F: Scalar>(
    ctx: &LocalContext<F>,
    backbone: &EncoderParams<F>,
    task: &TaskSpec<'_>,
    phi_t: ArrayView2<'_, F>,
    phi_g: ArrayView1<'_, F>,
) -> Result<PromptGrads<F>> {
    let n = task.train.len();
    if n == 0 {
        return Err(Error::Shape("no labeled nodes".into()));
    }
    let p = apply_prompts(ctx, backbone, phi_t, phi_g)?;
    let anchors = text_anchors(&p.text, task.labels, task.train, task.classes)?;
    let d = anchors.ncols();
    let s = F::of(task.sharpness);
    let inv_n = F::of(1.0 / n as f64);

    let anchor_units: Vec<(Array1<F>, F)> = anchors.rows().into_iter().map(unit).collect();
    let mut grad_anchor = Array2::<F>::zeros(anchors.raw_dim());
    let mut upstream = Array2::<F>::zeros(p.cache.z.raw_dim());
    let mut loss = F::zero();
    for &v in task.train {
        let (g_hat, g_norm) = unit(p.cache.z.row(v));
        let cosines: Vec<F> = anchor_units.iter().map(|(a, _)| g_hat.dot(a)).collect();
        let logits: Vec<F> = cosines.iter().map(|&c| s * c).collect();
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: F = exps.iter().copied().sum();
        let y = task.labels[v] as usize;
        loss += (total.ln() + max - logits[y]) * inv_n;
        for (c, (a_hat, a_norm)) in anchor_units.iter().enumerate() {
            let indicator = if c == y { F::one() } else { F::zero() };
            let delta = (exps[c] / total - indicator) * inv_n * s;
            if g_norm.as_f64() > NORM_EPS {
                let mut row = upstream.row_mut(v);
                row.zip_mut_with(&(a_hat - &g_hat.mapv(|x| x * cosines[c])), |u, &t| {
                    *u += delta * t / g_norm
                });
            }
            if a_norm.as_f64() > NORM_EPS {
                let mut row = grad_anchor.row_mut(c);
                row.zip_mut_with(&(&g_hat - &a_hat.mapv(|x| x * cosines[c])), |u, &t| {
                    *u += delta * t / *a_norm
                });
            }
        }
    }

    // Anchors -> normalized text rows -> pooled rows -> shared prefix sum.
    let mut counts = vec![0usize; task.classes];
    for &v in task.train {
        counts[task.labels[v] as usize] += 1;
    }
    let lp = phi_t.nrows();
    let mut grad_prefix = Array1::<F>::zeros(d);
    if lp > 0 {
        for &v in task.train {
            let c = task.labels[v] as usize;
            let (u, t_norm) = unit(p.text.row(v));
            if t_norm.as_f64() <= NORM_EPS {
                continue;
            }
            let g_u = grad_anchor.row(c).mapv(|x| x / F::of(counts[c] as f64));
            let proj = u.dot(&g_u);
            let scale = t_norm * F::of((lp + ctx.summary_lens[v]) as f64);
            grad_prefix.zip_mut_with(&(&g_u - &u.mapv(|x| x * proj)), |g, &t| *g += t / scale);
        }
    }
    let text = Array2::from_shape_fn((lp, d), |(_, j)| grad_prefix[j]);

    let (_, g_x) =
        graph_backward_with_input(backbone, &ctx.inputs.propagator, &p.cache, &upstream)?;
    Ok(PromptGrads {
        loss,
        text,
        graph: g_x.sum_axis(Axis(0)),
    })
}

#[derive(Debug, Clone)]
pub struct TunedPrompts<F> {
    pub text: Array2<F>,
    pub graph: Array1<F>,
    /// Loss before each step.
    pub losses: Vec<f64>,
}

/// `epochs` steps of gradient descent on both prompts.
pub fn finetune_prompts<F: Scalar>(
    ctx: &LocalContext<F>,
    backbone: &EncoderParams<F>,
    task: &TaskSpec<'_>,
    phi_t: &Array2<F>,
    phi_g: &Array1<F>,
    lr: f64,
    epochs: usize,
) -> Result<TunedPrompts<F>> {
    let (mut text, mut graph) = (phi_t.clone(), phi_g.clone());
    let mut losses = Vec::with_capacity(epochs);
    if lr == 0.0 {
        return Ok(TunedPrompts {
            text,
            graph,
            losses,
        });
    }
    let lr = F::of(lr);
    for _ in 0..epochs {
        let g = prompt_loss_and_grads(ctx, backbone, task, text.view(), graph.view())?;
        losses.push(g.loss.as_f64());
        text.zip_mut_with(&g.text, |p, &d| *p -= lr * d);
        graph.zip_mut_with(&g.graph, |p, &d| *p -= lr * d);
    }
    Ok(TunedPrompts {
        text,
        graph,
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptSelection {
    pub client: usize,
    pub text_index: usize,
    pub graph_index: usize,
    pub validation_score: f64,
}

/// Index of the best score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (m, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = m;
        }
    }
    best
}

/// Picks the text prompt with the graph prompt held at `graph_index`, then
/// the graph prompt with the chosen text prompt, scoring on `val`.
pub fn select_prompts<F: Scalar>(
    ctx: &LocalContext<F>,
    backbone: &EncoderParams<F>,
    task: &TaskSpec<'_>,
    text_pool: &PromptPool<F>,
    graph_pool: &PromptPool<F>,
    graph_index: usize,
    val: &[usize],
    client: usize,
) -> Result<PromptSelection> {
    if text_pool.is_empty() || graph_pool.is_empty() {
        return Err(Error::Config("empty prompt pool".into()));
    }
    let graph_prompt = |m: usize| graph_pool.prompts[m].row(0);
    let held = apply_prompts(
        ctx,
        backbone,
        text_pool.prompts[0].view(),
        graph_prompt(graph_index),
    )?;
    let mut text_scores = Vec::with_capacity(text_pool.len());
    for phi_t in &text_pool.prompts {
        let p = prompted_text(ctx, phi_t.view());
        let anchors = text_anchors(&p, task.labels, task.train, task.classes)?;
        text_scores.push(evaluate(&held.cache.z, task.labels, val, &anchors)?);
    }
    let text_index = argmax_first(&text_scores);
    let phi_t = text_pool.prompts[text_index].view();
    let graph_scores = (0..graph_pool.len())
        .map(|m| prompted_accuracy(ctx, backbone, task, phi_t, graph_prompt(m), val))
        .collect::<Result<Vec<_>>>()?;
    let graph_index = argmax_first(&graph_scores);
    Ok(PromptSelection {
        client,
        text_index,
        graph_index,
        validation_score: graph_scores[graph_index],
    })
}

/// `Z^T'`: each node's summary pooled together with the prompt rows.
pub fn prompted_text<F: Scalar>(ctx: &LocalContext<F>, phi_t: ArrayView2<'_, F>) -> Array2<F> {
    let lp = phi_t.nrows();
    if lp == 0 {
        return ctx.text.clone();
    }
    let prefix = phi_t.sum_axis(Axis(0));
    let mut out = Array2::zeros(ctx.text.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let t = ctx.summary_lens[i];
        let count = F::of((lp + t) as f64);
        let scale = F::of(t as f64);
        for ((o, &p), &x) in row.iter_mut().zip(&prefix).zip(ctx.text.row(i)) {
            *o = (p + scale * x) / count;
        }
    }
    out
}

/// One client's tuned prompt for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptUpdate<F> {
    pub client: usize,
    pub index: usize,
    pub prompt: Array2<F>,
    pub samples: u64,
}

/// Clients and total sample count behind each prompt index.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub members: Vec<Vec<usize>>,
    pub samples: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
}

impl GroupAssignment {
    /// `n_k / N_m` for each member of group `m`, in member order.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        self.samples[m]
            .iter()
            .map(|&n| n as f64 / self.totals[m] as f64)
            .collect()
    }
}

/// Sample-weighted average of the updates within each index group;
/// indices nobody selected keep their previous prompt bit for bit.
pub fn group_aggregate<F: Scalar>(
    pool: &PromptPool<F>,
    updates: &[PromptUpdate<F>],
) -> Result<(PromptPool<F>, GroupAssignment)> {
    let m = pool.len();
    let mut groups = GroupAssignment {
        members: vec![Vec::new(); m],
        samples: vec![Vec::new(); m],
        totals: vec![0; m],
    };
    let mut order: Vec<&PromptUpdate<F>> = updates.iter().collect();
    order.sort_by_key(|u| u.client);
    for u in &order {
        if u.index >= m {
            return Err(Error::Shape(format!(
                "prompt index {} out of range (M = {m})",
                u.index
            )));
        }
        if u.prompt.dim() != pool.prompts[u.index].dim() {
            return Err(Error::Shape("uploaded prompt has the wrong shape".into()));
        }
        groups.members[u.index].push(u.client);
        groups.samples[u.index].push(u.samples);
        groups.totals[u.index] += u.samples;
    }
    let mut next = pool.clone();
    for idx in 0..m {
        if groups.members[idx].is_empty() {
            continue;
        }
        let total = groups.totals[idx];
        let mut acc = Array2::<F>::zeros(pool.prompts[idx].raw_dim());
        for u in order.iter().filter(|u| u.index == idx) {
            let w = if total == 0 {
                1.0 / groups.members[idx].len() as f64
            } else {
                u.samples as f64 / total as f64
            };
            acc.scaled_add(F::of(w), &u.prompt);
        }
        next.prompts[idx] = acc;
    }
    Ok((next, groups))
}
