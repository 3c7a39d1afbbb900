use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::data::{make_batches, Batch};
use crate::error::{Error, Result};
use crate::inference::GENERATOR_PREFIX;
use crate::layers::Module;
use crate::losses::{
    discriminator_loss, feat_match_loss, generator_adv_loss, laplacian_loss, pd_loss, ssim,
    total_generator_loss, FeatureExtractor, LossParts, LAPLACIAN_LEVELS,
};
use crate::model::{Checkpoint, Discriminator, Generator, GeneratorOutput};
use crate::scene::DatasetManifest;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tensor};

pub const DISC_PREFIXES: [&str; 2] = ["disc1", "disc2"];
pub const LOSS_CSV: &str = "loss_curve.csv";
pub const FINAL_CHECKPOINT: &str = "final.s360";

/// Adam over a named parameter set. Parameters without a gradient are left
/// untouched and their step counters do not advance.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: AdamConfig,
    pub lr: f64,
    pub states: BTreeMap<String, AdamState<f32>>,
}

impl Optimizer {
    pub fn new(config: AdamConfig, lr: f64) -> Self {
        Optimizer {
            config,
            lr,
            states: BTreeMap::new(),
        }
    }

    pub fn step<M: Module<f32>>(&mut self, prefix: &str, module: &mut M) -> Result<()> {
        let mut failure = None;
        module.visit_mut(prefix, &mut |name, t| {
            if failure.is_some() || t.grad().is_none() {
                return;
            }
            let state = match self.states.get_mut(name) {
                Some(s) => s,
                None => match AdamState::new(t.numel(), self.config) {
                    Ok(s) => self.states.entry(name.to_string()).or_insert(s),
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                },
            };
            if let Err(e) = adam_step(name, t, state, self.lr) {
                failure = Some(e);
            }
        });
        failure.map_or(Ok(()), Err)
    }

    fn save(&self, tag: &str, ckpt: &mut Checkpoint) -> serde_json::Value {
        let mut steps = serde_json::Map::new();
        for (name, s) in &self.states {
            let dims = [s.m.len()];
            ckpt.insert(&format!("{tag}.m.{name}"), &dims, &s.m);
            ckpt.insert(&format!("{tag}.v.{name}"), &dims, &s.v);
            steps.insert(name.clone(), s.t.into());
        }
        serde_json::Value::Object(steps)
    }

    fn restore(&mut self, tag: &str, ckpt: &Checkpoint, steps: &serde_json::Value) -> Result<()> {
        self.states.clear();
        let steps = steps
            .as_object()
            .ok_or_else(|| Error::Format(format!("missing step table for `{tag}`")))?;
        for (name, t) in steps {
            let t = t
                .as_u64()
                .ok_or_else(|| Error::Format(format!("bad step count for `{name}`")))?;
            let len = ckpt
                .get(&format!("{tag}.m.{name}"))
                .map(|r| r.data.len())
                .unwrap_or(0);
            let mut s = AdamState::new(len, self.config)?;
            s.m = ckpt.values(&format!("{tag}.m.{name}"), len)?;
            s.v = ckpt.values(&format!("{tag}.v.{name}"), len)?;
            s.t = t;
            self.states.insert(name.clone(), s);
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub adv: f64,
    pub ssim: f64,
    pub pd: f64,
    pub feat: f64,
    pub lap: f64,
    /// Mean absolute reconstruction error, for monitoring only.
    pub l1: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "iteration,loss_d,loss_g,adv,ssim,pd,feat,lap,l1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration, self.loss_d, self.loss_g, self.adv, self.ssim, self.pd, self.feat, self.lap, self.l1
        )
    }

    fn is_finite(&self) -> bool {
        [self.loss_d, self.loss_g, self.adv, self.ssim, self.pd, self.feat, self.lap]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Generator, both discriminators and their optimizers.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminators: [Discriminator<f32>; 2],
    pub opt_g: Optimizer,
    pub opt_d: Optimizer,
    pub iteration: usize,
    extractor: FeatureExtractor<f32>,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model_config();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(&model, &mut rng)?;
        let seg = model.use_seg_condition;
        let discriminators = [
            Discriminator::new(&mut rng, model.disc_widths, 1, seg),
            Discriminator::new(&mut rng, model.disc_widths, 2, seg),
        ];
        Ok(Trainer {
            config: config.clone(),
            generator,
            discriminators,
            opt_g: Optimizer::new(config.adam(), config.lr),
            opt_d: Optimizer::new(config.adam(), config.lr),
            iteration: 0,
            extractor: FeatureExtractor::new(config.extractor_seed),
        })
    }

    fn seg<'a>(&self, batch: &'a Batch) -> Option<&'a Tensor<f32>> {
        self.config.use_seg_condition.then_some(&batch.gt_seg)
    }

    pub fn generate(&self, batch: &Batch) -> Result<GeneratorOutput<f32>> {
        self.generator.forward(&batch.left, &batch.right, &batch.codes)
    }

    /// Updates both discriminators on real vs the (detached) fake views.
    pub fn d_step(&mut self, batch: &Batch, fake: &Tensor<f32>) -> Result<f64> {
        let fake = fake.detach();
        let seg = self.seg(batch);
        let mut total: Option<Tensor<f32>> = None;
        for d in &self.discriminators {
            let real = d.forward(&batch.gt, &batch.left, &batch.right, seg)?;
            let fake = d.forward(&fake, &batch.left, &batch.right, seg)?;
            let l = discriminator_loss(&real.logits, &fake.logits, self.config.adv_convention)?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        let loss = total.expect("two scales").mul_scalar(0.5);
        for d in &self.discriminators {
            d.zero_grad();
        }
        loss.backward()?;
        for (d, prefix) in self.discriminators.iter_mut().zip(DISC_PREFIXES) {
            self.opt_d.step(prefix, d)?;
        }
        Ok(loss.item() as f64)
    }

    /// Generator loss terms for a prediction, averaged over both scales.
    pub fn generator_losses(&self, batch: &Batch, image: &Tensor<f32>) -> Result<(Tensor<f32>, LossParts<f32>)> {
        let weights = self.config.loss_weights();
        let seg = self.seg(batch);
        let mut adv: Option<Tensor<f32>> = None;
        let mut feat: Option<Tensor<f32>> = None;
        for d in &self.discriminators {
            let fake = d.forward(image, &batch.left, &batch.right, seg)?;
            let a = generator_adv_loss(&fake.logits, self.config.adv_convention);
            adv = Some(match adv {
                Some(t) => t.add(&a)?,
                None => a,
            });
            if weights.lambda_feat != 0.0 {
                let real = d.forward(&batch.gt, &batch.left, &batch.right, seg)?;
                let f = feat_match_loss(&real.features, &fake.features)?;
                feat = Some(match feat {
                    Some(t) => t.add(&f)?,
                    None => f,
                });
            }
        }
        let zero = || Tensor::<f32>::scalar(0.0);
        let parts = LossParts {
            adv: adv.expect("two scales").mul_scalar(0.5),
            feat: feat.map_or_else(zero, |f| f.mul_scalar(0.5)),
            ssim: if weights.lambda_ssim != 0.0 {
                ssim(image, &batch.gt)?
            } else {
                Tensor::scalar(1.0)
            },
            pd: if weights.lambda_pd != 0.0 {
                pd_loss(image, &batch.gt, &self.extractor)?
            } else {
                zero()
            },
            lap: if weights.lambda_lap != 0.0 {
                laplacian_loss(image, &batch.gt, LAPLACIAN_LEVELS)?
            } else {
                zero()
            },
        };
        Ok((total_generator_loss(&parts, &weights)?, parts))
    }

    /// Updates the generator through the discriminators as they are now.
    pub fn g_step(&mut self, batch: &Batch, out: &GeneratorOutput<f32>) -> Result<(f64, LossParts<f32>)> {
        let (loss, parts) = self.generator_losses(batch, &out.image)?;
        self.generator.zero_grad();
        loss.backward()?;
        self.opt_g.step(GENERATOR_PREFIX, &mut self.generator)?;
        Ok((loss.item() as f64, parts))
    }

    /// One D-step followed by one G-step on the same prediction.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        self.iteration += 1;
        let out = self.generate(batch)?;
        let l1 = out
            .image
            .data()
            .iter()
            .zip(batch.gt.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / out.image.numel() as f64;
        let loss_d = self.d_step(batch, &out.image)?;
        let (loss_g, parts) = self.g_step(batch, &out)?;
        let item = |t: &Tensor<f32>| t.item() as f64;
        Ok(StepLog {
            iteration: self.iteration,
            loss_d,
            loss_g,
            adv: item(&parts.adv),
            ssim: item(&parts.ssim),
            pd: item(&parts.pd),
            feat: item(&parts.feat),
            lap: item(&parts.lap),
            l1,
        })
    }

    /// Snapshot of all weights, optimizer moments and the run config.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(self.config.model_config());
        ckpt.iteration = self.iteration as u64;
        ckpt.insert_module(GENERATOR_PREFIX, &self.generator);
        for (d, prefix) in self.discriminators.iter().zip(DISC_PREFIXES) {
            ckpt.insert_module(prefix, d);
        }
        let steps_g = self.opt_g.save("adam_g", &mut ckpt);
        let steps_d = self.opt_d.save("adam_d", &mut ckpt);
        ckpt.meta = serde_json::json!({
            "train_config": self.config,
            "adam_g_steps": steps_g,
            "adam_d_steps": steps_d,
        });
        Ok(ckpt)
    }

    /// Rebuilds a trainer mid-run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn restore(ckpt: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(
            ckpt.meta
                .get("train_config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no training config".into()))?,
        )?;
        if config.model_config() != ckpt.config {
            return Err(Error::ConfigConflict(
                "stored training config disagrees with the model header".into(),
            ));
        }
        let mut t = Trainer::new(&config)?;
        ckpt.load_module(GENERATOR_PREFIX, &mut t.generator)?;
        for (d, prefix) in t.discriminators.iter_mut().zip(DISC_PREFIXES) {
            ckpt.load_module(prefix, d)?;
        }
        t.opt_g.restore("adam_g", ckpt, &ckpt.meta["adam_g_steps"])?;
        t.opt_d.restore("adam_d", ckpt, &ckpt.meta["adam_d_steps"])?;
        t.iteration = ckpt.iteration as usize;
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<StepLog>,
}

fn dump_batch(dir: &Path, iteration: usize, batch: &Batch, log: &StepLog) -> Result<PathBuf> {
    let path = dir.join(format!("nonfinite_iter{iteration}.json"));
    let doc = serde_json::json!({
        "iteration": iteration,
        "losses": log,
        "samples": batch.samples,
        "shape": batch.left.shape(),
        "left": batch.left.data(),
        "right": batch.right.data(),
        "gt": batch.gt.data(),
    });
    let text = serde_json::to_string(&doc)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Runs the alternating optimization, writing the loss curve, periodic
/// checkpoints and the final checkpoint under `config.out_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    let manifest = DatasetManifest::load(&config.dataset)?;
    train_with(Trainer::new(config)?, &manifest)
}

/// Continues `trainer` until it reaches its configured iteration count.
/// The seeded batch stream is replayed up to the trainer's iteration, so a
/// restored run continues exactly as the uninterrupted one would.
pub fn train_with(mut trainer: Trainer, manifest: &DatasetManifest) -> Result<TrainOutcome> {
    let config = trainer.config.clone();
    if (manifest.height, manifest.width) != (config.height, config.width) {
        return Err(Error::ConfigConflict(format!(
            "dataset images are {}x{}, config asks for {}x{}",
            manifest.width, manifest.height, config.width, config.height
        )));
    }
    let mut batches = make_batches(manifest, config.tau_deg, config.delta, config.batch_size, config.seed)?;
    for _ in 0..trainer.iteration * config.batch_size {
        batches.draw_sample();
    }
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join(LOSS_CSV);
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
    writeln!(csv, "{}", StepLog::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;

    let mut curve = Vec::with_capacity(config.iterations);
    while trainer.iteration < config.iterations {
        let batch = batches.next_batch()?;
        let log = trainer.train_step(&batch)?;
        writeln!(csv, "{}", log.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        if !log.is_finite() {
            csv.flush().map_err(|e| Error::io(&csv_path, e))?;
            let dump = dump_batch(out, log.iteration, &batch, &log)?;
            return Err(Error::NonFinite {
                iteration: log.iteration,
                dump,
            });
        }
        if log.iteration % 50 == 0 || log.iteration == 1 {
            log::info!(
                "iter {} loss_d {:.4} loss_g {:.4} l1 {:.4}",
                log.iteration,
                log.loss_d,
                log.loss_g,
                log.l1
            );
        }
        curve.push(log);
        if config.checkpoint_every > 0 && log.iteration % config.checkpoint_every == 0 {
            trainer
                .checkpoint()?
                .save(&out.join(format!("checkpoint_{:06}.s360", log.iteration)))?;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let checkpoint = trainer.checkpoint()?;
    checkpoint.save(&out.join(FINAL_CHECKPOINT))?;
    Ok(TrainOutcome { checkpoint, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, emit_dataset, grid_locations};

    fn setup(train_locs: usize) -> (tempfile::TempDir, DatasetManifest, TrainConfig) {
        let dir = tempfile::tempdir().unwrap();
        let scene = build_scene(5, 1).unwrap();
        let data = dir.path().join("data");
        let m = emit_dataset(&scene, &grid_locations(train_locs, false), 15, 32, 32, &data).unwrap();
        let cfg = TrainConfig {
            dataset: data,
            out_dir: dir.path().join("run"),
            height: 32,
            width: 32,
            widths: [4, 8, 8],
            decoder_width: 4,
            latent_width: 8,
            disc_widths: [4, 4, 4],
            batch_size: 2,
            iterations: 3,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        (dir, m, cfg)
    }

    fn snapshot<M: Module<f32>>(m: &M) -> Vec<f32> {
        let mut v = Vec::new();
        m.visit("", &mut |_, t| v.extend_from_slice(t.data()));
        v
    }

    #[test]
    fn sub_steps_touch_only_their_network() {
        let (_d, m, cfg) = setup(1);
        let mut t = Trainer::new(&cfg).unwrap();
        let batch = make_batches(&m, 60.0, 12, 2, 0).unwrap().next_batch().unwrap();
        let g0 = snapshot(&t.generator);
        let d0: Vec<_> = t.discriminators.iter().map(snapshot).collect();

        let out = t.generate(&batch).unwrap();
        t.d_step(&batch, &out.image).unwrap();
        assert_eq!(snapshot(&t.generator), g0);
        let d1: Vec<_> = t.discriminators.iter().map(snapshot).collect();
        assert!(d1.iter().zip(&d0).all(|(a, b)| a != b));

        t.g_step(&batch, &out).unwrap();
        assert_ne!(snapshot(&t.generator), g0);
        assert_eq!(t.discriminators.iter().map(snapshot).collect::<Vec<_>>(), d1);
    }

    #[test]
    fn detached_zero_weight_loss_leaves_generator_unchanged() {
        let (_d, m, mut cfg) = setup(1);
        cfg.lambda_ssim = 0.0;
        cfg.lambda_pd = 0.0;
        cfg.lambda_feat = 0.0;
        cfg.lambda_lap = 0.0;
        let mut t = Trainer::new(&cfg).unwrap();
        let batch = make_batches(&m, 60.0, 12, 2, 0).unwrap().next_batch().unwrap();
        let out = t.generate(&batch).unwrap();
        let (_, mut parts) = t.generator_losses(&batch, &out.image).unwrap();
        parts.adv = parts.adv.detach();
        let loss = total_generator_loss(&parts, &cfg.loss_weights()).unwrap();
        let g0 = snapshot(&t.generator);
        t.generator.zero_grad();
        loss.backward().unwrap();
        t.opt_g.step(GENERATOR_PREFIX, &mut t.generator).unwrap();
        assert_eq!(snapshot(&t.generator), g0);
        assert!(t.opt_g.states.is_empty());
    }

    #[test]
    fn seeded_runs_repeat_and_write_artifacts() {
        let (_d, _m, cfg) = setup(1);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        let csv = std::fs::read_to_string(cfg.out_dir.join(LOSS_CSV)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), StepLog::CSV_HEADER);
        assert_eq!(csv.lines().count(), 4);
        assert!(cfg.out_dir.join("checkpoint_000002.s360").exists());
        assert!(cfg.out_dir.join(FINAL_CHECKPOINT).exists());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let (_d, m, cfg) = setup(1);
        let full = train(&cfg).unwrap();

        let mut short = cfg.clone();
        short.iterations = 2;
        let mid = train(&short).unwrap().checkpoint;
        let mut restored = Trainer::restore(&Checkpoint::from_bytes(&mid.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(restored.checkpoint().unwrap().to_bytes().unwrap(), mid.to_bytes().unwrap());
        assert!(!restored.opt_d.states.is_empty());
        restored.config.iterations = cfg.iterations;
        let resumed = train_with(restored, &m).unwrap();
        assert_eq!(resumed.curve.as_slice(), &full.curve[2..]);
        let strip = |c: &Checkpoint| {
            let mut c = c.clone();
            c.meta = serde_json::Value::Null;
            c.to_bytes().unwrap()
        };
        assert_eq!(strip(&resumed.checkpoint), strip(&full.checkpoint));
    }

    #[test]
    fn ablations_train_and_reload() {
        let (_d, _m, mut cfg) = setup(1);
        cfg.use_cpc = false;
        cfg.use_msat_multiscale = false;
        cfg.use_seg_condition = false;
        cfg.use_lap = false;
        cfg.use_pd = false;
        cfg.use_feat = false;
        cfg.iterations = 2;
        let out = train(&cfg).unwrap();
        let reloaded = Checkpoint::from_bytes(&out.checkpoint.to_bytes().unwrap()).unwrap();
        crate::inference::LoadedModel::from_checkpoint(&reloaded).unwrap();
        assert!(out.curve.iter().all(|l| l.pd == 0.0 && l.feat == 0.0 && l.lap == 0.0));
    }

    #[test]
    fn non_finite_loss_dumps_batch() {
        let (_d, m, cfg) = setup(1);
        let mut t = Trainer::new(&cfg).unwrap();
        t.discriminators[1].visit_mut("", &mut |_, p| {
            let n = p.numel();
            p.set_data(vec![f32::NAN; n]).unwrap();
        });
        match train_with(t, &m) {
            Err(Error::NonFinite { iteration, dump }) => {
                assert_eq!(iteration, 1);
                let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
                assert_eq!(doc["samples"].as_array().unwrap().len(), 2);
            }
            other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.curve)),
        }
    }
}
