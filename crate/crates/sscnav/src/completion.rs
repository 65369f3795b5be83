//! Semantic scene completion and confidence estimation: dataset generation
//! by random view removal, encoder-decoder training with masked losses, and
//! unobserved-region IoU evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_nn::{LayerSpec, Network, NetworkSpec, Optimizer, Tape, Tensor, UpdateRule};

use crate::error::{Result, SscError};
use crate::perception::{
    ground_truth_ego_map, project_ego_map, raycast_observe, EgoObservation, EgoSemMap, MapParams,
    SensorParams,
};
use crate::world::{Pose, World, NUM_CATEGORIES, UNKNOWN};

/// One training pair: a map projected from a reduced set of views and the
/// privileged full target at the same pose.
#[derive(Debug, Clone)]
pub struct CompletionSample {
    pub input: EgoSemMap,
    pub target: EgoSemMap,
    pub pose: Pose,
}

impl CompletionSample {
    /// CE / MSE scoring region: unobserved in the input, observed in the
    /// target.
    pub fn loss_mask(&self) -> Vec<bool> {
        self.input
            .observed()
            .iter()
            .zip(self.target.observed())
            .map(|(&i, &t)| !i && t)
            .collect()
    }
}

/// Network output bundle for one input map.
#[derive(Debug, Clone)]
pub struct CompletedMap {
    /// (N+1) x R x R
    pub logits: Tensor,
    /// per-pixel softmax of the logits
    pub probs: Tensor,
    /// argmax labels (ties to the lowest channel)
    pub labels: Vec<u8>,
    /// input labels on observed cells, predicted labels elsewhere
    pub composited: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    pub cells: usize,
    /// row-major, in [0, 1]; 1.0 on input-observed cells
    pub values: Vec<f32>,
}

pub fn completion_net_spec(widths: &[usize]) -> NetworkSpec {
    NetworkSpec::encoder_decoder(NUM_CATEGORIES + 1, widths, NUM_CATEGORIES + 1)
}

/// The confidence net sees the input map one-hot plus the completion
/// softmax, and regresses a single sigmoid channel.
pub fn confidence_net_spec(widths: &[usize]) -> NetworkSpec {
    let mut spec = NetworkSpec::encoder_decoder(2 * (NUM_CATEGORIES + 1), widths, 1);
    spec.layers.push(LayerSpec::Sigmoid);
    spec
}

/// Random-walk data collection: the agent wanders each world, and every
/// post-warmup step becomes an anchor emitting four samples that retain
/// k = 1, 2, 3, 4 of the last five views (a nested random subset, so the
/// observed region grows monotonically with k).
pub fn build_completion_dataset(
    worlds: &[World],
    anchors_per_world: usize,
    sensor: &SensorParams,
    map: &MapParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CompletionSample>> {
    if worlds.is_empty() {
        return Err(SscError::Argument("no worlds".into()));
    }
    let mut out = Vec::with_capacity(worlds.len() * anchors_per_world * 4);
    for w in worlds {
        let nav: Vec<usize> = (0..w.width() * w.height()).filter(|&i| w.is_navigable(i)).collect();
        if nav.is_empty() {
            continue;
        }
        let (x, y) = w.cell_center(nav[rng.gen_range(0..nav.len())]);
        let mut pose = Pose { x, y, heading: rng.gen_range(0.0..std::f32::consts::TAU) };
        let mut recent: Vec<EgoObservation> = Vec::new();
        let mut anchors = 0usize;
        let mut steps = 0usize;
        while anchors < anchors_per_world && steps < anchors_per_world * 20 + 100 {
            steps += 1;
            recent.push(raycast_observe(w, pose, sensor, None));
            if recent.len() > 5 {
                recent.remove(0);
            }
            if recent.len() == 5 {
                let mut order: Vec<usize> = (0..5).collect();
                order.shuffle(rng);
                let target = ground_truth_ego_map(w, pose, map);
                for k in 1..=4usize {
                    let mut keep: Vec<usize> = order[..k].to_vec();
                    keep.sort_unstable(); // chronological, for most-recent-wins
                    let views: Vec<&EgoObservation> = keep.iter().map(|&i| &recent[i]).collect();
                    let input = project_ego_map(&views, pose, w, map)?;
                    out.push(CompletionSample { input, target: target.clone(), pose });
                }
                anchors += 1;
            }
            pose = random_walk_step(w, pose, rng);
        }
    }
    Ok(out)
}

fn random_walk_step(w: &World, pose: Pose, rng: &mut ChaCha8Rng) -> Pose {
    let heading = pose.heading + rng.gen_range(-1.0..1.0) * std::f32::consts::FRAC_PI_2;
    let (s, c) = heading.sin_cos();
    // sweep forward, stop before the first non-navigable cell
    let step = w.resolution() / 2.0;
    let mut reach = 0.0f32;
    let mut t = step;
    while t <= 0.25 + 1e-6 {
        if w.navigable_at(pose.x + t * c, pose.y + t * s) {
            reach = t;
            t += step;
        } else {
            break;
        }
    }
    Pose { x: pose.x + reach * c, y: pose.y + reach * s, heading }
}

/// Runs the completion net and assembles logits, softmax, argmax labels and
/// the composited map (input pasted back over observed cells).
pub fn complete(net: &Network, o: &EgoSemMap) -> Result<CompletedMap> {
    let r = o.cells();
    let div = net.spec().spatial_divisor();
    if r % div != 0 {
        return Err(SscError::Config(format!(
            "map size {r} not divisible by network downsampling factor {div}"
        )));
    }
    let logits = net.infer(&o.to_tensor())?;
    if logits.shape() != [NUM_CATEGORIES + 1, r, r] {
        return Err(SscError::Config(format!(
            "completion net output shape {:?}, expected ({}, {r}, {r})",
            logits.shape(),
            NUM_CATEGORIES + 1
        )));
    }
    let (probs, labels) = softmax_argmax(&logits, r);
    let composited: Vec<u8> = labels
        .iter()
        .enumerate()
        .map(|(i, &p)| if o.observed()[i] { o.labels()[i] } else { p })
        .collect();
    Ok(CompletedMap { logits, probs, labels, composited })
}

fn softmax_argmax(logits: &Tensor, r: usize) -> (Tensor, Vec<u8>) {
    let ch = NUM_CATEGORIES + 1;
    let hw = r * r;
    let data = logits.data();
    let mut probs = vec![0.0f32; ch * hw];
    let mut labels = vec![0u8; hw];
    for px in 0..hw {
        let mut best = f32::NEG_INFINITY;
        let mut best_c = 0usize;
        for c in 0..ch {
            let v = data[c * hw + px];
            if v > best {
                best = v;
                best_c = c;
            }
        }
        labels[px] = best_c as u8;
        let mut z = 0.0f64;
        for c in 0..ch {
            z += ((data[c * hw + px] - best) as f64).exp();
        }
        for c in 0..ch {
            probs[c * hw + px] = (((data[c * hw + px] - best) as f64).exp() / z) as f32;
        }
    }
    (Tensor::from_vec(&[ch, r, r], probs).unwrap(), labels)
}

/// Runs the confidence net on an input map and its completion. Observed
/// cells are forced to 1.0.
pub fn estimate_confidence(
    cnet: &Network,
    o: &EgoSemMap,
    completed: &CompletedMap,
) -> Result<ConfidenceMap> {
    let r = o.cells();
    let raw = confidence_forward_input(o, completed)?;
    let out = cnet.infer(&raw)?;
    if out.shape() != [1, r, r] {
        return Err(SscError::Config(format!(
            "confidence net output shape {:?}, expected (1, {r}, {r})",
            out.shape()
        )));
    }
    let values = out
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if o.observed()[i] { 1.0 } else { v.clamp(0.0, 1.0) })
        .collect();
    Ok(ConfidenceMap { cells: r, values })
}

fn confidence_forward_input(o: &EgoSemMap, completed: &CompletedMap) -> Result<Tensor> {
    let r = o.cells();
    let one_hot = o.to_tensor();
    let mut data = one_hot.data().to_vec();
    data.extend_from_slice(completed.probs.data());
    Ok(Tensor::from_vec(&[2 * (NUM_CATEGORIES + 1), r, r], data)?)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// per-epoch multiplicative learning-rate factor; 1.0 keeps lr constant
    pub lr_decay: f32,
    pub widths: Vec<usize>,
    pub seed: u64,
    /// fraction of samples held out for validation / best-checkpoint choice
    pub val_fraction: f32,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch: 16,
            lr: 1e-4,
            lr_decay: 1.0,
            widths: vec![32, 64, 128, 256, 256],
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

fn split_val(count: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(rng);
    let n_val = ((count as f32 * cfg.val_fraction) as usize).min(count.saturating_sub(1));
    let val = idx.split_off(count - n_val);
    (idx, val)
}

/// Cross-entropy training of the completion net; returns the
/// best-validation network and per-epoch losses.
pub fn train_completion(
    samples: &[CompletionSample],
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(SscError::Argument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::new(completion_net_spec(&cfg.widths), cfg.seed)?;
    let mut opt = Optimizer::new(UpdateRule::adam(cfg.lr), &net.params);
    let (train_idx, val_idx) = split_val(samples.len(), cfg, &mut rng);

    fn sample_loss(net: &mut Network, s: &CompletionSample, backward: bool) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(s.input.to_tensor());
        let out = net.forward(&mut tape, x)?;
        let target: Vec<u16> = s.target.labels().iter().map(|&l| l as u16).collect();
        let loss = tape.cross_entropy_masked(out, &target, &s.loss_mask())?;
        let v = tape.scalar_f64(loss);
        if backward {
            tape.backward(loss, &mut net.params)?;
        }
        Ok(v)
    }

    let mut best: Option<(f64, tensor_nn::ParamSet)> = None;
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr * cfg.lr_decay.powi(epoch as i32));
        order.shuffle(&mut rng);
        let mut train_sum = 0.0f64;
        let mut train_count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            net.params.zero_grad();
            for &i in chunk {
                train_sum += sample_loss(&mut net, &samples[i], true)?;
                train_count += 1;
            }
            net.params.scale_grads(1.0 / chunk.len() as f32);
            opt.step(&mut net.params);
        }
        let mut val_sum = 0.0f64;
        for &i in &val_idx {
            val_sum += sample_loss(&mut net, &samples[i], false)?;
        }
        let val_loss = if val_idx.is_empty() {
            train_sum / train_count.max(1) as f64
        } else {
            val_sum / val_idx.len() as f64
        };
        stats.push(EpochStats { train_loss: train_sum / train_count.max(1) as f64, val_loss });
        if best.as_ref().map(|(b, _)| val_loss < *b).unwrap_or(true) {
            best = Some((val_loss, net.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok((net, stats))
}

/// MSE training of the confidence net against the frozen completion net's
/// binary correctness maps.
pub fn train_confidence(
    completion: &Network,
    samples: &[CompletionSample],
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(SscError::Argument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cnet = Network::new(confidence_net_spec(&cfg.widths), cfg.seed.wrapping_add(1))?;
    let mut opt = Optimizer::new(UpdateRule::adam(cfg.lr), &cnet.params);
    let (train_idx, val_idx) = split_val(samples.len(), cfg, &mut rng);

    // completion outputs and correctness targets are fixed; precompute once
    let mut inputs = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let completed = complete(completion, &s.input)?;
        let correctness: Vec<f32> = completed
            .labels
            .iter()
            .zip(s.target.labels())
            .map(|(&p, &t)| (p == t) as u8 as f32)
            .collect();
        inputs.push(confidence_forward_input(&s.input, &completed)?);
        targets.push(correctness);
    }

    let sample_loss = |cnet: &mut Network, i: usize, backward: bool| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(inputs[i].clone());
        let out = cnet.forward(&mut tape, x)?;
        let loss = tape.mse_masked(out, &targets[i], &samples[i].loss_mask())?;
        let v = tape.scalar_f64(loss);
        if backward {
            tape.backward(loss, &mut cnet.params)?;
        }
        Ok(v)
    };

    let mut best: Option<(f64, tensor_nn::ParamSet)> = None;
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        opt.set_lr(cfg.lr * cfg.lr_decay.powi(epoch as i32));
        order.shuffle(&mut rng);
        let mut train_sum = 0.0f64;
        let mut train_count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            cnet.params.zero_grad();
            for &i in chunk {
                train_sum += sample_loss(&mut cnet, i, true)?;
                train_count += 1;
            }
            cnet.params.scale_grads(1.0 / chunk.len() as f32);
            opt.step(&mut cnet.params);
        }
        let mut val_sum = 0.0f64;
        for &i in &val_idx {
            val_sum += sample_loss(&mut cnet, i, false)?;
        }
        let val_loss = if val_idx.is_empty() {
            train_sum / train_count.max(1) as f64
        } else {
            val_sum / val_idx.len() as f64
        };
        stats.push(EpochStats { train_loss: train_sum / train_count.max(1) as f64, val_loss });
        if best.as_ref().map(|(b, _)| val_loss < *b).unwrap_or(true) {
            best = Some((val_loss, cnet.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        cnet.params = params;
    }
    Ok((cnet, stats))
}

#[derive(Debug, Clone)]
pub struct IouReport {
    /// per-category IoU; None where the union is empty (category absent)
    pub per_category: Vec<Option<f64>>,
    /// mean over present categories
    pub mean: f64,
}

/// Aggregated IoU over (prediction, target, scoring mask) triples. Only
/// masked cells count; categories never seen in prediction or target are
/// reported absent.
pub fn eval_iou<'a, I>(triples: I) -> IouReport
where
    I: IntoIterator<Item = (&'a [u8], &'a [u8], &'a [bool])>,
{
    let ncat = NUM_CATEGORIES + 1;
    let mut inter = vec![0u64; ncat];
    let mut union = vec![0u64; ncat];
    for (pred, target, mask) in triples {
        for i in 0..pred.len() {
            if !mask[i] {
                continue;
            }
            let (p, t) = (pred[i] as usize, target[i] as usize);
            if p == t {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[t] += 1;
            }
        }
    }
    let per_category: Vec<Option<f64>> = (0..ncat)
        .map(|c| {
            if union[c] == 0 {
                None
            } else {
                Some(inter[c] as f64 / union[c] as f64)
            }
        })
        .collect();
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    IouReport { per_category, mean }
}

/// IoU of the trained net over a sample set, on the loss-mask region.
pub fn eval_net_iou(net: &Network, samples: &[CompletionSample]) -> Result<IouReport> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut masks = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(complete(net, &s.input)?.labels);
        masks.push(s.loss_mask());
    }
    Ok(eval_iou(
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| (&preds[i][..], s.target.labels(), &masks[i][..])),
    ))
}

/// IoU of a constant-label predictor (majority-class and predict-unknown
/// baselines) on the same region.
pub fn eval_constant_iou(label: u8, samples: &[CompletionSample]) -> IouReport {
    let masks: Vec<Vec<bool>> = samples.iter().map(|s| s.loss_mask()).collect();
    let preds: Vec<Vec<u8>> = samples
        .iter()
        .map(|s| vec![label; s.target.labels().len()])
        .collect();
    eval_iou(
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| (&preds[i][..], s.target.labels(), &masks[i][..])),
    )
}

/// Most frequent target label on the scoring region across a sample set.
pub fn majority_label(samples: &[CompletionSample]) -> u8 {
    let mut counts = [0u64; NUM_CATEGORIES + 1];
    for s in samples {
        for (i, m) in s.loss_mask().iter().enumerate() {
            if *m {
                counts[s.target.labels()[i] as usize] += 1;
            }
        }
    }
    (0..counts.len()).max_by_key(|&c| counts[c]).unwrap_or(UNKNOWN as usize) as u8
}

const DS_MAGIC: &[u8; 6] = b"SSCDS1";

fn write_map<W: Write>(w: &mut W, m: &EgoSemMap) -> std::io::Result<()> {
    w.write_all(m.labels())?;
    let mut byte = 0u8;
    for (i, &b) in m.observed().iter().enumerate() {
        if b {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            w.write_all(&[byte])?;
            byte = 0;
        }
    }
    if m.observed().len() % 8 != 0 {
        w.write_all(&[byte])?;
    }
    Ok(())
}

fn read_map<R: Read>(r: &mut R, cells: usize) -> Result<EgoSemMap> {
    let n = cells * cells;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)?;
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let observed: Vec<bool> = (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
    EgoSemMap::from_parts(cells, labels, observed)
}

pub fn save_dataset(samples: &[CompletionSample], cells: usize, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DS_MAGIC)?;
    w.write_u32::<LittleEndian>(samples.len() as u32)?;
    w.write_u32::<LittleEndian>(cells as u32)?;
    for s in samples {
        w.write_f32::<LittleEndian>(s.pose.x)?;
        w.write_f32::<LittleEndian>(s.pose.y)?;
        w.write_f32::<LittleEndian>(s.pose.heading)?;
        write_map(&mut w, &s.input)?;
        write_map(&mut w, &s.target)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(Vec<CompletionSample>, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != DS_MAGIC {
        return Err(SscError::Data(format!("{}: not a dataset file", path.display())));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let cells = r.read_u32::<LittleEndian>()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let x = r.read_f32::<LittleEndian>()?;
        let y = r.read_f32::<LittleEndian>()?;
        let heading = r.read_f32::<LittleEndian>()?;
        let input = read_map(&mut r, cells)?;
        let target = read_map(&mut r, cells)?;
        samples.push(CompletionSample { input, target, pose: Pose { x, y, heading } });
    }
    Ok((samples, cells))
}
