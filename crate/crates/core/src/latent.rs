//! Latent mixtures: per-sample codes and generators for both sources, test
//! time code inference, the ratio mask built from the two generated
//! sources, and the bridge that turns that mask into initial estimates for
//! the iterative method.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines::{Separation, Separator};
use crate::error::{Error, Result};
use crate::models::checkpoint::{load_mlp, save_mlp};
use crate::models::{
    bind_generator, diverged, mask_apply, reconstruction_graph, GeneratorConfig, GeneratorModel,
    LatentTable,
};
use crate::rng;
use crate::signal::SeparationDataset;
use crate::tensor::{read_egt, write_egt, Bindings, Graph, Tensor, SAFE_DIV_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub generator: GeneratorConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub infer_steps: usize,
    /// Adam step size for latent codes, in training and at inference.
    pub code_lr: f64,
    pub weight_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            generator: GeneratorConfig::default(),
            stage1_epochs: 25,
            stage2_epochs: 25,
            infer_steps: 500,
            code_lr: 0.01,
            weight_lr: 0.001,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0
            || self.stage2_epochs == 0
            || self.infer_steps == 0
            || self.batch_size == 0
            || self.generator.latent_dim == 0
        {
            return Err(Error::Config(
                "latent mixture epochs, steps, batch size and latent dim must be positive".into(),
            ));
        }
        if !(self.code_lr > 0.0) || !(self.weight_lr > 0.0) || !(self.generator.range > 0.0) {
            return Err(Error::Config(
                "latent mixture learning rates and range must be positive".into(),
            ));
        }
        Ok(())
    }
}

const INFER_BATCH: usize = 256;
/// Observed samples searched when warm-starting mixture codes.
const WARM_START_CANDIDATES: usize = 2048;

fn stack(samples: &[&Tensor], idx: &[usize]) -> Result<Tensor> {
    Tensor::stack_rows(&idx.iter().map(|&i| samples[i]).collect::<Vec<_>>())
}

fn check_shapes(samples: &[&Tensor], shape: &[usize], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} samples")));
    }
    match samples.iter().find(|s| s.shape() != shape) {
        Some(s) => Err(Error::ShapeMismatch {
            op: "latent mixtures",
            left: s.shape().to_vec(),
            right: shape.to_vec(),
        }),
        None => Ok(()),
    }
}

/// Jointly fits a generator and one code per observed sample on mean L1
/// reconstruction. Returns the generator, the codes and the per-epoch loss.
pub fn train_glo(
    observed: &[&Tensor],
    config: &LmConfig,
) -> Result<(GeneratorModel, LatentTable, Vec<f64>)> {
    config.validate()?;
    let shape = observed
        .first()
        .ok_or_else(|| Error::InvalidArgument("no observed samples".into()))?
        .shape()
        .to_vec();
    check_shapes(observed, &shape, "observed")?;
    let mut gen = GeneratorModel::init(
        "gb",
        &shape,
        &config.generator,
        config.weight_lr,
        config.seed,
    )?;
    let mut r = rng::stream(config.seed, "glo");
    let mut codes = LatentTable::init(
        observed.len(),
        config.generator.latent_dim,
        config.code_lr,
        &mut r,
    );
    let mut g = reconstruction_graph(&gen, true);
    let mut order: Vec<usize> = (0..observed.len()).collect();
    let mut trace = Vec::with_capacity(config.stage1_epochs);
    for epoch in 0..config.stage1_epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let z = codes.gather(idx);
            let target = stack(observed, idx)?;
            let mut b = Bindings::new().bind("z", &z).bind("target", &target);
            bind_generator(&gen, &mut b);
            let loss = g
                .forward(&b)
                .map_err(|e| diverged(epoch, e))?
                .item()
                .expect("scalar loss");
            let grads = g.backward().map_err(|e| diverged(epoch, e))?;
            drop(b);
            gen.opt.step(&mut gen.net, &grads)?;
            codes.step(idx, &grads["z"])?;
            total += loss * idx.len() as f64;
        }
        trace.push(total / observed.len() as f64);
    }
    Ok((gen, codes, trace))
}

/// Index of the observed sample closest in L1 to each mixture, searched
/// over the first observed samples only.
fn nearest_observed(mixtures: &[&Tensor], observed: &[&Tensor]) -> Vec<usize> {
    let pool = &observed[..observed.len().min(WARM_START_CANDIDATES)];
    mixtures
        .iter()
        .map(|y| {
            let mut best = (f64::INFINITY, 0);
            for (j, b) in pool.iter().enumerate() {
                let d: f64 = y
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(p, q)| (p - q).abs())
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

fn warm_codes(
    mixtures: &[&Tensor],
    observed: &[&Tensor],
    observed_codes: &LatentTable,
    lr: f64,
) -> Result<LatentTable> {
    let nearest = nearest_observed(mixtures, observed);
    LatentTable::from_tensor(&observed_codes.gather(&nearest), lr)
}

/// Sum of the generators applied to their own codes `z0, z1, ..`, scored
/// by mean L1 times `scale`. Only generator `train` gets trainable weights.
fn joint_graph(gens: &[&GeneratorModel], train: Option<usize>, scale: f64) -> Graph {
    let mut g = Graph::new();
    let target = g.input("target");
    let mut sum = None;
    for (k, gen) in gens.iter().enumerate() {
        let z = g.param(&format!("z{k}"));
        let out = gen.build(&mut g, z, train == Some(k));
        sum = Some(match sum {
            None => out,
            Some(s) => g.add(s, out),
        });
    }
    let l1 = g.l1(sum.expect("at least one generator"), target);
    if scale != 1.0 {
        g.scale(l1, scale);
    }
    g
}

fn code_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("z{k}")).collect()
}

/// Optimizes the codes of `tables` (one per generator, one row per
/// mixture) to reconstruct `mixtures` with the generators frozen. Returns
/// the final per-mixture mean L1.
pub fn fit_codes(
    gens: &[&GeneratorModel],
    tables: &mut [LatentTable],
    mixtures: &[&Tensor],
    steps: usize,
) -> Result<Vec<f64>> {
    if gens.is_empty() || gens.len() != tables.len() {
        return Err(Error::InvalidArgument(
            "one code table per generator is required".into(),
        ));
    }
    if tables.iter().any(|t| t.len() != mixtures.len()) {
        return Err(Error::InvalidArgument(
            "code tables do not match the mixtures".into(),
        ));
    }
    check_shapes(mixtures, gens[0].sample_shape(), "mixture")?;
    let names = code_names(gens.len());
    let all: Vec<usize> = (0..mixtures.len()).collect();
    for idx in all.chunks(INFER_BATCH) {
        // per-sample losses summed, so a code's gradient does not depend on
        // which batch it lands in
        let mut g = joint_graph(gens, None, idx.len() as f64);
        let target = stack(mixtures, idx)?;
        for step in 0..steps {
            let zs: Vec<Tensor> = tables.iter().map(|t| t.gather(idx)).collect();
            let mut b = Bindings::new().bind("target", &target);
            for (name, z) in names.iter().zip(&zs) {
                b.insert(name, z);
            }
            for gen in gens {
                bind_generator(gen, &mut b);
            }
            g.forward(&b).map_err(|e| diverged(step, e))?;
            let grads = g.backward().map_err(|e| diverged(step, e))?;
            for (name, table) in names.iter().zip(tables.iter_mut()) {
                table.step(idx, &grads[name.as_str()])?;
            }
        }
    }
    reconstruction_errors(gens, tables, mixtures)
}

fn reconstruction_errors(
    gens: &[&GeneratorModel],
    tables: &[LatentTable],
    mixtures: &[&Tensor],
) -> Result<Vec<f64>> {
    let outputs = generate_all(gens, tables)?;
    mixtures
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut total = 0.0;
            for (j, v) in y.data().iter().enumerate() {
                let s: f64 = outputs.iter().map(|o| o[i].data()[j]).sum();
                total += (v - s).abs();
            }
            Ok(total / y.len() as f64)
        })
        .collect()
}

fn generate_all(gens: &[&GeneratorModel], tables: &[LatentTable]) -> Result<Vec<Vec<Tensor>>> {
    gens.iter()
        .zip(tables)
        .map(|(gen, t)| {
            let mut out = Vec::with_capacity(t.len());
            let all: Vec<usize> = (0..t.len()).collect();
            for idx in all.chunks(INFER_BATCH) {
                out.extend(gen.generate(&t.gather(idx))?);
            }
            Ok(out)
        })
        .collect()
}

/// Trains the unobserved-source generator and both per-mixture code
/// tables with the observed-source generator frozen. Returns the
/// generator, the two tables and the per-epoch mean L1.
pub fn train_lm_stage2(
    mixtures: &[&Tensor],
    gen_b: &GeneratorModel,
    init_b: LatentTable,
    config: &LmConfig,
) -> Result<(GeneratorModel, LatentTable, LatentTable, Vec<f64>)> {
    config.validate()?;
    check_shapes(mixtures, gen_b.sample_shape(), "mixture")?;
    if init_b.len() != mixtures.len() || init_b.dim() != gen_b.latent_dim() {
        return Err(Error::InvalidArgument(
            "initial observed-source codes do not match the mixtures".into(),
        ));
    }
    let mut gen_x = GeneratorModel::init(
        "gx",
        gen_b.sample_shape(),
        &config.generator,
        config.weight_lr,
        rng::stream(config.seed, "lm-gx").random(),
    )?;
    let mut r = rng::stream(config.seed, "lm-stage2");
    let mut codes_b = init_b;
    let mut codes_x = LatentTable::init(
        mixtures.len(),
        config.generator.latent_dim,
        config.code_lr,
        &mut r,
    );
    let mut g = joint_graph(&[gen_b, &gen_x], Some(1), 1.0);
    let mut order: Vec<usize> = (0..mixtures.len()).collect();
    let mut trace = Vec::with_capacity(config.stage2_epochs);
    for epoch in 0..config.stage2_epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let (zb, zx) = (codes_b.gather(idx), codes_x.gather(idx));
            let target = stack(mixtures, idx)?;
            let mut b = Bindings::new()
                .bind("z0", &zb)
                .bind("z1", &zx)
                .bind("target", &target);
            bind_generator(gen_b, &mut b);
            bind_generator(&gen_x, &mut b);
            let loss = g
                .forward(&b)
                .map_err(|e| diverged(epoch, e))?
                .item()
                .expect("scalar loss");
            let grads = g.backward().map_err(|e| diverged(epoch, e))?;
            drop(b);
            gen_x.opt.step(&mut gen_x.net, &grads)?;
            codes_b.step(idx, &grads["z0"])?;
            codes_x.step(idx, &grads["z1"])?;
            total += loss * idx.len() as f64;
        }
        trace.push(total / mixtures.len() as f64);
    }
    Ok((gen_x, codes_b, codes_x, trace))
}

/// Estimated sources for a set of mixtures.
#[derive(Clone, Debug, PartialEq)]
pub struct LmInference {
    pub codes_b: LatentTable,
    pub codes_x: LatentTable,
    pub b: Vec<Tensor>,
    pub x: Vec<Tensor>,
    /// Final per-mixture mean L1 of `b + x` against the mixture.
    pub residual: Vec<f64>,
}

/// Both generators frozen; only codes are optimized.
pub fn lm_infer(
    mixtures: &[&Tensor],
    gen_b: &GeneratorModel,
    gen_x: &GeneratorModel,
    init_b: LatentTable,
    init_x: LatentTable,
    steps: usize,
) -> Result<LmInference> {
    let mut tables = [init_b, init_x];
    let residual = fit_codes(&[gen_b, gen_x], &mut tables, mixtures, steps)?;
    let mut outputs = generate_all(&[gen_b, gen_x], &tables)?;
    let x = outputs.pop().expect("two generators");
    let b = outputs.pop().expect("two generators");
    let [codes_b, codes_x] = tables;
    Ok(LmInference {
        codes_b,
        codes_x,
        b,
        x,
        residual,
    })
}

/// `b / (b + x + eps)` elementwise.
pub fn lmm_mask(b: &Tensor, x: &Tensor) -> Result<Tensor> {
    b.zip_map(x, |b, x| (b / (b + x + SAFE_DIV_EPS)).clamp(0.0, 1.0))
}

/// Bilinear resampling of a 2-D map with corner-aligned grids.
pub fn upsample_bilinear(m: &Tensor, shape: [usize; 2]) -> Result<Tensor> {
    let [h, w] = *m.shape() else {
        return Err(Error::InvalidArgument(
            "bilinear upsampling needs a 2-D map".into(),
        ));
    };
    if shape[0] < h || shape[1] < w || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {:?} to smaller shape {shape:?}",
            m.shape()
        )));
    }
    if shape == [h, w] {
        return Ok(m.clone());
    }
    let coord = |i: usize, from: usize, to: usize| -> (usize, usize, f64) {
        if to == 1 || from == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (from - 1) as f64 / (to - 1) as f64;
        let lo = (pos.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        (lo, hi, pos - lo as f64)
    };
    let d = m.data();
    let mut out = Vec::with_capacity(shape[0] * shape[1]);
    for i in 0..shape[0] {
        let (r0, r1, fr) = coord(i, h, shape[0]);
        for j in 0..shape[1] {
            let (c0, c1, fc) = coord(j, w, shape[1]);
            let top = d[r0 * w + c0] * (1.0 - fc) + d[r0 * w + c1] * fc;
            let bottom = d[r1 * w + c0] * (1.0 - fc) + d[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Block-mean downsampling by integer factors.
pub fn downsample_mean(t: &Tensor, shape: [usize; 2]) -> Result<Tensor> {
    let [h, w] = *t.shape() else {
        return Err(Error::InvalidArgument(
            "downsampling needs a 2-D map".into(),
        ));
    };
    if shape[0] == 0 || shape[1] == 0 || h % shape[0] != 0 || w % shape[1] != 0 {
        return Err(Error::InvalidArgument(format!(
            "{:?} is not an integer multiple of {shape:?}",
            t.shape()
        )));
    }
    let (fh, fw) = (h / shape[0], w / shape[1]);
    let d = t.data();
    let out = (0..shape[0] * shape[1])
        .map(|k| {
            let (i, j) = (k / shape[1], k % shape[1]);
            let mut s = 0.0;
            for r in i * fh..(i + 1) * fh {
                s += d[r * w + j * fw..r * w + (j + 1) * fw].iter().sum::<f64>();
            }
            s / (fh * fw) as f64
        })
        .collect();
    Tensor::new(shape.to_vec(), out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmHistory {
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
}

/// Trained two-stage model.
#[derive(Clone, Debug, PartialEq)]
pub struct LmModel {
    pub config: LmConfig,
    pub gen_b: GeneratorModel,
    pub gen_x: GeneratorModel,
    pub codes_observed: LatentTable,
    pub codes_mixture_b: LatentTable,
    pub codes_mixture_x: LatentTable,
    pub history: LmHistory,
    /// Observed samples used to warm-start codes at inference.
    warm_pool: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct LmManifest {
    kind: String,
    config: LmConfig,
    sample_shape: Vec<usize>,
    history: LmHistory,
}

impl LmModel {
    pub fn fit(observed: &[&Tensor], mixtures: &[&Tensor], config: &LmConfig) -> Result<Self> {
        let (gen_b, codes_observed, stage1) = train_glo(observed, config)?;
        let init_b = warm_codes(mixtures, observed, &codes_observed, config.code_lr)?;
        let (gen_x, codes_mixture_b, codes_mixture_x, stage2) =
            train_lm_stage2(mixtures, &gen_b, init_b, config)?;
        Ok(LmModel {
            config: config.clone(),
            gen_b,
            gen_x,
            codes_observed,
            codes_mixture_b,
            codes_mixture_x,
            history: LmHistory { stage1, stage2 },
            warm_pool: observed
                .iter()
                .take(WARM_START_CANDIDATES)
                .map(|t| (*t).clone())
                .collect(),
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.gen_b.sample_shape()
    }

    /// Code inference from warm-started observed-source codes and small
    /// random unobserved-source codes.
    pub fn infer(&self, mixtures: &[&Tensor]) -> Result<LmInference> {
        let pool: Vec<&Tensor> = self.warm_pool.iter().collect();
        let init_b = warm_codes(mixtures, &pool, &self.codes_observed, self.config.code_lr)?;
        let mut r = rng::stream(self.config.seed, "lm-infer");
        let init_x = LatentTable::init(
            mixtures.len(),
            self.gen_x.latent_dim(),
            self.config.code_lr,
            &mut r,
        );
        lm_infer(
            mixtures,
            &self.gen_b,
            &self.gen_x,
            init_b,
            init_x,
            self.config.infer_steps,
        )
    }

    /// Masks for mixtures of any shape: mixtures are block-averaged to the
    /// model resolution when they differ, and the masks upsampled back.
    pub fn masks(&self, mixtures: &[&Tensor]) -> Result<Vec<Tensor>> {
        let Some(first) = mixtures.first() else {
            return Ok(Vec::new());
        };
        let target = first.shape().to_vec();
        let working = self.sample_shape().to_vec();
        if target == working {
            let inf = self.infer(mixtures)?;
            return inf
                .b
                .iter()
                .zip(&inf.x)
                .map(|(b, x)| lmm_mask(b, x))
                .collect();
        }
        let (work2, target2) = bridge_shapes(&working, &target)?;
        let small: Vec<Tensor> = mixtures
            .iter()
            .map(|y| downsample_mean(y, work2))
            .collect::<Result<_>>()?;
        let inf = self.infer(&small.iter().collect::<Vec<_>>())?;
        inf.b
            .iter()
            .zip(&inf.x)
            .map(|(b, x)| upsample_bilinear(&lmm_mask(b, x)?, target2))
            .collect()
    }

    /// Generated sources for mixtures of any shape, resampled like [`LmModel::masks`].
    pub fn sources(&self, mixtures: &[&Tensor]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let Some(first) = mixtures.first() else {
            return Ok((Vec::new(), Vec::new()));
        };
        let target = first.shape().to_vec();
        let working = self.sample_shape().to_vec();
        if target == working {
            let inf = self.infer(mixtures)?;
            return Ok((inf.b, inf.x));
        }
        let (work2, target2) = bridge_shapes(&working, &target)?;
        let small: Vec<Tensor> = mixtures
            .iter()
            .map(|y| downsample_mean(y, work2))
            .collect::<Result<_>>()?;
        let inf = self.infer(&small.iter().collect::<Vec<_>>())?;
        let up = |v: Vec<Tensor>| -> Result<Vec<Tensor>> {
            v.iter().map(|t| upsample_bilinear(t, target2)).collect()
        };
        Ok((up(inf.b)?, up(inf.x)?))
    }

    /// `gen_b.ckpt`, `gen_x.ckpt`, the code tables, the warm-start pool and
    /// `lm.json` inside `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let extra = serde_json::json!({ "range": self.config.generator.range });
        save_mlp(
            dir.join("gen_b.ckpt"),
            "generator",
            self.config.seed,
            &self.gen_b.net,
            extra.clone(),
        )?;
        save_mlp(
            dir.join("gen_x.ckpt"),
            "generator",
            self.config.seed,
            &self.gen_x.net,
            extra,
        )?;
        write_egt(
            &self.codes_observed.as_tensor(),
            dir.join("codes_observed.egt"),
        )?;
        write_egt(
            &self.codes_mixture_b.as_tensor(),
            dir.join("codes_mixture_b.egt"),
        )?;
        write_egt(
            &self.codes_mixture_x.as_tensor(),
            dir.join("codes_mixture_x.egt"),
        )?;
        let pool: Vec<&Tensor> = self.warm_pool.iter().collect();
        write_egt(&Tensor::stack_rows(&pool)?, dir.join("warm_pool.egt"))?;
        let manifest = LmManifest {
            kind: "latent-mixtures".into(),
            config: self.config.clone(),
            sample_shape: self.sample_shape().to_vec(),
            history: self.history.clone(),
        };
        let path = dir.join("lm.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("lm.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: LmManifest = serde_json::from_str(&text)?;
        if m.kind != "latent-mixtures" {
            return Err(Error::format(
                path.display().to_string(),
                0,
                format!("kind `{}` is not latent-mixtures", m.kind),
            ));
        }
        let cfg = m.config;
        let (_, net_b) = load_mlp(dir.join("gen_b.ckpt"))?;
        let (_, net_x) = load_mlp(dir.join("gen_x.ckpt"))?;
        let range = cfg.generator.range;
        let gen_b = GeneratorModel::from_net(net_b, &m.sample_shape, range, cfg.weight_lr)?;
        let gen_x = GeneratorModel::from_net(net_x, &m.sample_shape, range, cfg.weight_lr)?;
        let table = |name: &str| LatentTable::from_tensor(&read_egt(dir.join(name))?, cfg.code_lr);
        let pool = read_egt(dir.join("warm_pool.egt"))?.unstack_rows(&m.sample_shape)?;
        Ok(LmModel {
            codes_observed: table("codes_observed.egt")?,
            codes_mixture_b: table("codes_mixture_b.egt")?,
            codes_mixture_x: table("codes_mixture_x.egt")?,
            config: cfg,
            gen_b,
            gen_x,
            history: m.history,
            warm_pool: pool,
        })
    }
}

fn bridge_shapes(working: &[usize], target: &[usize]) -> Result<([usize; 2], [usize; 2])> {
    match (<[usize; 2]>::try_from(working), <[usize; 2]>::try_from(target)) {
        (Ok(w), Ok(t)) => Ok((w, t)),
        _ => Err(Error::InvalidArgument(format!(
            "cannot bridge {working:?} to {target:?}"
        ))),
    }
}

/// `x^0 = y * (1 - m)` from ratio masks computed at the model resolution
/// and resampled to the dataset resolution.
pub fn lmm_init_for_nes(ds: &SeparationDataset, model: &LmModel) -> Result<Vec<Tensor>> {
    let ys = ds.mixture_refs();
    let masks = model.masks(&ys)?;
    ys.iter()
        .zip(&masks)
        .map(|(y, m)| Ok(mask_apply(y, m)?.1))
        .collect()
}

/// Separator over a latent-mixture model: either the generated sources
/// directly, or the ratio mask applied to the mixture.
#[derive(Clone, Debug)]
pub struct LatentSeparator {
    pub config: LmConfig,
    pub masked: bool,
    pub model: Option<LmModel>,
}

impl LatentSeparator {
    pub fn new(config: LmConfig, masked: bool) -> Self {
        LatentSeparator {
            config,
            masked,
            model: None,
        }
    }
}

impl Separator for LatentSeparator {
    fn name(&self) -> &str {
        if self.masked {
            "lmm"
        } else {
            "lm"
        }
    }

    fn fit(&mut self, ds: &SeparationDataset) -> Result<()> {
        self.model = Some(LmModel::fit(
            &ds.observed_refs(),
            &ds.mixture_refs(),
            &self.config,
        )?);
        Ok(())
    }

    fn separate(&self, ys: &[&Tensor]) -> Result<Separation> {
        let model = self.model.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} separator used before fit", self.name()))
        })?;
        if self.masked {
            return Separation::from_masks(ys, model.masks(ys)?);
        }
        let (b, x) = model.sources(ys)?;
        Ok(Separation { b, x, masks: None })
    }
}
