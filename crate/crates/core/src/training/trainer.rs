use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::log::{EpochRecord, TrainingLog};
use super::losses::{add_l1_grad, adversarial_loss, d_loss_grad, g_adv_grad, l1, probabilities};
use crate::dataset::{make_probe_set, preprocess, preprocess_batch, FacePairManifest, Pose, ProbeKind, TrainSplit};
use crate::error::{Error, IoContext, Result};
use crate::exec;
use crate::evaluation::probe_set_id;
use crate::instrumentation::variance_trace;
use crate::mix_seed;
use crate::models::{checkpoint, Discriminator, Generator, ModelBundle, ModelKind};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "training_log.jsonl";

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: TrainingLog,
    pub run_dir: PathBuf,
    /// Epochs at which checkpoints were written.
    pub checkpoints: Vec<usize>,
}

/// A training example: side inputs (absent sides are `None`) and the frontal
/// target, as indices into the preloaded image table. Pix2pix units carry a
/// single side; pairwise units group both sides of one frontal record.
#[derive(Clone, Copy, Debug)]
struct Unit {
    left: Option<usize>,
    right: Option<usize>,
    front: usize,
}

struct TrainData {
    images: Vec<Tensor>,
    units: Vec<Unit>,
}

fn load_data(manifest: &FacePairManifest, split: &TrainSplit, kind: ModelKind, resolution: usize) -> Result<TrainData> {
    let mut ids: Vec<String> = Vec::new();
    let mut slots: HashMap<String, usize> = HashMap::new();
    let mut intern = |id: &str| {
        *slots.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            ids.len() - 1
        })
    };
    let mut pix_units = Vec::new();
    let mut grouped: BTreeMap<String, Unit> = BTreeMap::new();
    for pid in &split.pair_ids {
        let pair = manifest
            .pair(pid)
            .ok_or_else(|| Error::Invalid(format!("split references unknown pair `{pid}`")))?;
        let side = intern(&pair.side);
        let front = intern(&pair.front);
        let pose = manifest.record(&pair.side).expect("pair references known record").pose;
        let mut single = Unit {
            left: None,
            right: None,
            front,
        };
        let grouped_unit = grouped.entry(pair.front.clone()).or_insert(single);
        match pose {
            Pose::Left => {
                single.left = Some(side);
                grouped_unit.left = Some(side);
            }
            Pose::Right => {
                single.right = Some(side);
                grouped_unit.right = Some(side);
            }
            Pose::Front => return Err(Error::Invalid(format!("pair `{pid}` has a frontal input"))),
        }
        pix_units.push(single);
    }
    let images = exec::map(&ids, |id| manifest.load_record_image(id).and_then(|img| preprocess(&img, resolution)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let units = match kind {
        ModelKind::Pix2pix => pix_units,
        ModelKind::Pairwise => grouped.into_values().collect(),
    };
    Ok(TrainData { images, units })
}

/// One generator/discriminator pair's share of a batch.
struct SideJob {
    x: Tensor,
    y: Tensor,
}

#[derive(Default, Clone, Copy)]
struct StepLosses {
    loss_d: f64,
    g_adv: f64,
    l1: f64,
    identity: f64,
    pair: f64,
}

impl StepLosses {
    fn finite(&self) -> bool {
        [self.loss_d, self.g_adv, self.l1, self.identity, self.pair]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy)]
struct StepWeights {
    adv: f64,
    l1: f64,
    identity: f64,
    pair: f64,
}

struct Side<'a> {
    g: &'a mut Generator,
    d: &'a mut Discriminator,
    opt_g: &'a mut Adam,
    opt_d: &'a mut Adam,
}

fn stack(images: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    Tensor::stack(&idx.iter().map(|&i| &images[i]).collect::<Vec<_>>())
}

/// One alternating update. `jobs[i]` feeds `sides[i]`; `links` pairs batch
/// items of side 0 with items of side 1 for the pair term.
fn step(sides: &mut [Side<'_>], jobs: &[Option<SideJob>], links: &[(usize, usize)], w: StepWeights) -> Result<StepLosses> {
    // Generator outputs from the current parameters.
    let mut fakes = Vec::with_capacity(jobs.len());
    for (side, job) in sides.iter().zip(jobs) {
        fakes.push(match job {
            Some(j) => {
                let (fake, trace) = side.g.forward(&j.x)?;
                let ident = if w.identity > 0.0 { Some(side.g.forward(&j.y)?) } else { None };
                Some((fake, trace, ident))
            }
            None => None,
        });
    }

    // Pair term gradients.
    let mut pair_grads: Vec<Option<Tensor>> = vec![None; jobs.len()];
    let mut pair = 0.0;
    if !links.is_empty() {
        let (Some((fl, ..)), Some((fr, ..))) = (&fakes[0], &fakes[1]) else {
            return Err(Error::Invalid("pair links without both sides".into()));
        };
        let item = fl.item_len();
        let n = (links.len() * item) as f64;
        let mut gl = Tensor::zeros(fl.shape());
        let mut gr = Tensor::zeros(fr.shape());
        let mut sum = 0.0f64;
        let k = (w.pair / n) as f32;
        for &(a, b) in links {
            let (xa, xb) = (fl.item(a), fr.item(b));
            for (i, (&p, &q)) in xa.iter().zip(xb).enumerate() {
                sum += (p as f64 - q as f64).abs();
                let s = if p > q {
                    k
                } else if p < q {
                    -k
                } else {
                    0.0
                };
                gl.item_mut(a)[i] += s;
                gr.item_mut(b)[i] -= s;
            }
        }
        pair = sum / n;
        pair_grads[0] = Some(gl);
        pair_grads[1] = Some(gr);
    }

    let mut acc = StepLosses {
        pair,
        ..Default::default()
    };
    let mut active = 0usize;
    for ((side, job), (fake, pair_grad)) in sides.iter_mut().zip(jobs).zip(fakes.into_iter().zip(pair_grads)) {
        let (Some(job), Some((fake, trace, ident))) = (job, fake) else {
            continue;
        };
        active += 1;

        // Discriminator update on real vs current fake.
        side.d.zero_grad();
        let (real_logits, real_trace) = side.d.forward(&job.x, &job.y)?;
        let (fake_logits, fake_trace) = side.d.forward(&job.x, &fake)?;
        let adv = adversarial_loss(&probabilities(&real_logits), &probabilities(&fake_logits))?;
        let (gr, gf) = d_loss_grad(&real_logits, &fake_logits);
        side.d.backward(&real_trace, &gr);
        side.d.backward(&fake_trace, &gf);
        side.opt_d.step(&mut side.d.params_mut());

        // Generator update through the refreshed discriminator.
        let (fake_logits, fake_trace) = side.d.forward(&job.x, &fake)?;
        let g_adv = adversarial_loss(&probabilities(&fake_logits), &probabilities(&fake_logits))?.loss_g_adv;
        side.d.zero_grad();
        let d_input = side.d.backward(&fake_trace, &g_adv_grad(&fake_logits, w.adv));
        side.d.zero_grad();
        let (_, mut d_fake) = d_input.split_channels(3);
        add_l1_grad(d_fake.data_mut(), fake.data(), job.y.data(), w.l1);
        if let Some(pg) = pair_grad {
            d_fake.add_assign(&pg);
        }
        side.g.zero_grad();
        side.g.backward(&trace, &d_fake);
        let mut identity = 0.0;
        if let Some((id_out, id_trace)) = ident {
            identity = l1(&job.y, &id_out)?;
            let mut d_id = Tensor::zeros(id_out.shape());
            add_l1_grad(d_id.data_mut(), id_out.data(), job.y.data(), w.identity);
            side.g.backward(&id_trace, &d_id);
        }
        side.opt_g.step(&mut side.g.params_mut());

        acc.loss_d += adv.loss_d;
        acc.g_adv += g_adv;
        acc.l1 += l1(&fake, &job.y)?;
        acc.identity += identity;
    }
    let n = active.max(1) as f64;
    acc.loss_d /= n;
    acc.g_adv /= n;
    acc.l1 /= n;
    acc.identity /= n;
    Ok(acc)
}

/// Builds side jobs for a batch of units.
fn batch_jobs(data: &TrainData, batch: &[Unit], kind: ModelKind) -> Result<(Vec<Option<SideJob>>, Vec<(usize, usize)>)> {
    let job = |pick: &dyn Fn(&Unit) -> Option<usize>| -> Result<(Option<SideJob>, Vec<Option<usize>>)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut pos = Vec::with_capacity(batch.len());
        for u in batch {
            match pick(u) {
                Some(s) => {
                    pos.push(Some(xs.len()));
                    xs.push(s);
                    ys.push(u.front);
                }
                None => pos.push(None),
            }
        }
        if xs.is_empty() {
            return Ok((None, pos));
        }
        Ok((
            Some(SideJob {
                x: stack(&data.images, &xs)?,
                y: stack(&data.images, &ys)?,
            }),
            pos,
        ))
    };
    match kind {
        ModelKind::Pix2pix => {
            let (j, _) = job(&|u: &Unit| u.left.or(u.right))?;
            Ok((vec![j], Vec::new()))
        }
        ModelKind::Pairwise => {
            let (jl, pl) = job(&|u: &Unit| u.left)?;
            let (jr, pr) = job(&|u: &Unit| u.right)?;
            let links = pl
                .iter()
                .zip(&pr)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            Ok((vec![jl, jr], links))
        }
    }
}

/// Trains `bundle` on `split`, writing `training_log.jsonl` and checkpoints
/// under `run_dir`.
///
/// Each step updates every discriminator on (real, current fake) and then
/// its generator through the updated discriminator. Pairwise bundles run
/// twice the configured epochs over left/right/front triples; a triple
/// missing one side only trains the other side and skips the pair term.
pub fn train(
    config: &TrainConfig,
    mut bundle: ModelBundle,
    manifest: &FacePairManifest,
    split: &TrainSplit,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    if bundle.kind != config.model_kind {
        return Err(Error::Config(format!(
            "config trains {} but the bundle is {}",
            config.model_kind, bundle.kind
        )));
    }
    if split.pair_ids.is_empty() {
        return Err(Error::Invalid("cannot train on an empty split".into()));
    }
    let resolution = bundle.spec.input_resolution;
    let data = load_data(manifest, split, bundle.kind, resolution)?;
    let probes = if config.instrumentation {
        let ramp = make_probe_set(ProbeKind::GrayRamp, resolution, 0)?;
        Some((preprocess_batch(&ramp.images, resolution)?, probe_set_id(&ramp)))
    } else {
        None
    };

    fs::create_dir_all(run_dir).at(run_dir)?;
    let log_path = run_dir.join(LOG_FILE);
    if log_path.exists() {
        fs::remove_file(&log_path).at(&log_path)?;
    }

    let adam = AdamConfig {
        lr: config.learning_rate as f32,
        beta1: config.adam_beta1 as f32,
        ..AdamConfig::default()
    };
    let n_sides = bundle.generators.len();
    let mut opt_g: Vec<Adam> = (0..n_sides).map(|_| Adam::new(adam)).collect();
    let mut opt_d: Vec<Adam> = (0..n_sides).map(|_| Adam::new(adam)).collect();

    let epochs = config.effective_epochs();
    let mut log = TrainingLog::default();
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..data.units.len()).collect();
    for e in 0..epochs {
        let started = Instant::now();
        let lr = config.learning_rate * config.lr_decay_factor.powi(e as i32);
        opt_g.iter_mut().chain(opt_d.iter_mut()).for_each(|o| o.set_lr(lr as f32));
        let w = StepWeights {
            adv: config.weights.adv,
            l1: config.weights.l1,
            identity: config.weights.identity.value(e, epochs),
            pair: config.weights.pair.value(e, epochs),
        };
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, e as u64)));

        let mut sums = StepLosses::default();
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let units: Vec<Unit> = chunk.iter().map(|&i| data.units[i]).collect();
            let (jobs, links) = batch_jobs(&data, &units, bundle.kind)?;
            let mut sides: Vec<Side<'_>> = bundle
                .generators
                .iter_mut()
                .zip(bundle.discriminators.iter_mut())
                .zip(opt_g.iter_mut().zip(opt_d.iter_mut()))
                .map(|(((_, g), (_, d)), (og, od))| Side {
                    g,
                    d,
                    opt_g: og,
                    opt_d: od,
                })
                .collect();
            let s = step(&mut sides, &jobs, &links, w)?;
            if !s.finite() {
                return Err(Error::NonFinite {
                    epoch: e + 1,
                    step: steps,
                    message: format!(
                        "loss_D {} loss_G_adv {} loss_L1 {} identity {} pair {}",
                        s.loss_d, s.g_adv, s.l1, s.identity, s.pair
                    ),
                });
            }
            sums.loss_d += s.loss_d;
            sums.g_adv += s.g_adv;
            sums.l1 += s.l1;
            sums.identity += s.identity;
            sums.pair += s.pair;
            steps += 1;
        }

        let n = steps as f64;
        let mut record = EpochRecord {
            epoch: e + 1,
            loss_d: sums.loss_d / n,
            loss_g_adv: sums.g_adv / n,
            loss_l1: sums.l1 / n,
            loss_identity: sums.identity / n,
            loss_pair: sums.pair / n,
            loss_g: 0.0,
            w_identity: w.identity,
            w_pair: w.pair,
            learning_rate: lr,
            steps,
            wall_seconds: 0.0,
            variance: Vec::new(),
        };
        record.loss_g = w.adv * record.loss_g_adv
            + w.l1 * record.loss_l1
            + w.identity * record.loss_identity
            + w.pair * record.loss_pair;
        if let Some((p, probe_id)) = &probes {
            for (role, g) in &bundle.generators {
                let id = format!("{}/{}", bundle.id, role.generator_dir());
                record.variance.push(variance_trace(g, &id, p, probe_id)?);
            }
        }
        record.wall_seconds = started.elapsed().as_secs_f64();
        log::info!(
            "{} epoch {}/{}: loss_D {:.4} loss_G {:.4} L1 {:.4}",
            bundle.id,
            e + 1,
            epochs,
            record.loss_d,
            record.loss_g,
            record.loss_l1
        );
        TrainingLog::append_jsonl(&record, &log_path)?;
        log.records.push(record);

        let last = e + 1 == epochs;
        if last || (config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0) {
            checkpoint::save_bundle(&bundle, run_dir, e + 1)?;
            checkpoints.push(e + 1);
        }
    }
    Ok(TrainOutcome {
        bundle,
        log,
        run_dir: run_dir.to_path_buf(),
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GeneratorSpec;
    use crate::nn::Init;
    use rand::Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    fn snapshot(params: Vec<&crate::nn::Param>) -> Vec<Vec<f32>> {
        params.into_iter().map(|p| p.value.clone()).collect()
    }

    /// Runs one step with the given generator-side weights and returns the
    /// (generator, discriminator) parameters afterwards.
    fn one_step(w: StepWeights) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let spec = GeneratorSpec::new(3, 32, 4);
        let mut g = Generator::new(&spec, Init::Normal, &mut Init::rng(1)).unwrap();
        let mut d = Discriminator::new(32, 4, Init::Normal, &mut Init::rng(2)).unwrap();
        let (mut og, mut od) = (Adam::new(AdamConfig::default()), Adam::new(AdamConfig::default()));
        let job = SideJob {
            x: random([2, 3, 32, 32], 3),
            y: random([2, 3, 32, 32], 4),
        };
        let mut sides = [Side {
            g: &mut g,
            d: &mut d,
            opt_g: &mut og,
            opt_d: &mut od,
        }];
        step(&mut sides, &[Some(job)], &[], w).unwrap();
        (snapshot(g.params()), snapshot(d.params()))
    }

    #[test]
    fn generator_terms_do_not_reach_the_discriminator() {
        let base = StepWeights { adv: 1.0, l1: 100.0, identity: 0.0, pair: 0.0 };
        let other = StepWeights { adv: 7.0, l1: 3.0, identity: 5.0, pair: 0.0 };
        let (g1, d1) = one_step(base);
        let (g2, d2) = one_step(other);
        assert_eq!(d1, d2, "discriminator update depends on generator loss weights");
        assert_ne!(g1, g2);
    }

    #[test]
    fn discriminator_step_moves_only_the_discriminator_before_the_generator_step() {
        // With every generator weight at zero the generator gradient is zero,
        // so Adam leaves it untouched while the discriminator still learns.
        let spec = GeneratorSpec::new(3, 32, 4);
        let g0 = Generator::new(&spec, Init::Normal, &mut Init::rng(1)).unwrap();
        let d0 = Discriminator::new(32, 4, Init::Normal, &mut Init::rng(2)).unwrap();
        let (g, d) = one_step(StepWeights { adv: 0.0, l1: 0.0, identity: 0.0, pair: 0.0 });
        assert_eq!(g, snapshot(g0.params()));
        assert_ne!(d, snapshot(d0.params()));
    }
}
