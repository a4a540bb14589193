use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use orthoct_core::data::{
    generate_phantom, load_projection, load_volume, save_projection, save_volume, split_dataset,
    DatasetManifest, PhantomSpec, SplitTag,
};
use orthoct_core::geometry::{forward_project, Axis, Projection, Volume};
use orthoct_core::losses::PerceptualExtractor;
use orthoct_core::metrics::evaluate;
use orthoct_core::pipeline::{
    initial_estimate, Checkpoint, FileObserver, ModelConfig, Reconstructor, Stage1, Stage2,
    STAGE1_COMPONENTS, STAGE2_COMPONENTS,
};

use crate::config::RunConfig;
use crate::ConfigArgs;

pub const MANIFEST: &str = "manifest.csv";
pub const VOLUME_EXT: &str = "vol";
pub const PROJECTION_EXT: &str = "proj";

/// Display window of exported slices, in HU.
pub const SLICE_WINDOW: (f64, f64) = (-500.0, 800.0);

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

/// Per-phantom seed, so that neighbouring dataset seeds do not share
/// phantoms.
fn phantom_seed(dataset_seed: u64, i: usize) -> u64 {
    dataset_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(i as u64)
}

pub fn cmd_phantom(
    count: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(args.config.as_deref(), &args.sets)?;
    if let Some(c) = count {
        cfg.data.count = c;
    }
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    let data = &cfg.data;
    ensure!(data.count > 0, "phantom count must be positive");
    let split = split_dataset(data.count, data.train_fraction, data.seed)?;
    create_dir(out)?;
    let mut names = Vec::with_capacity(data.count);
    for i in 0..data.count {
        let spec = PhantomSpec {
            dims: cfg.model.dims,
            spacing: cfg.model.spacing,
            jitter: data.jitter,
            ..PhantomSpec::desk(phantom_seed(data.seed, i))
        };
        let vol = generate_phantom(&spec)?;
        let name = PathBuf::from(format!("phantom_{i:03}.{VOLUME_EXT}"));
        save_volume(&vol, &out.join(&name))?;
        names.push(name);
    }
    DatasetManifest::from_split(&names, &split)?.save(&out.join(MANIFEST))?;
    write_config(&cfg, &out.join("config.toml"))?;
    eprintln!(
        "wrote {} phantoms ({} train, {} test) to {}",
        data.count,
        split.train.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("{} has no usable file name", path.display()))
}

pub fn projection_paths(out: &Path, name: &str) -> [PathBuf; 2] {
    [Axis::Ap, Axis::Lat].map(|a| out.join(format!("{name}.{}.{PROJECTION_EXT}", a.tag())))
}

pub fn cmd_project(volume: &Path, out: &Path) -> Result<()> {
    let vol = load_volume(volume)?;
    create_dir(out)?;
    let name = stem(volume)?;
    let paths = projection_paths(out, &name);
    for (axis, path) in [Axis::Ap, Axis::Lat].into_iter().zip(&paths) {
        save_projection(&forward_project(&vol, axis), path)?;
    }
    Ok(())
}

/// HU to an 8-bit gray level in the display window.
pub fn window_pixel(hu: f32) -> u8 {
    let (lo, hi) = SLICE_WINDOW;
    let t = ((hu as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

fn export_slices(vol: &Volume<f32>, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let [nx, ny, nz] = vol.dims;
    for z in 0..nz {
        let px: Vec<u8> = vol.axial(z).iter().map(|&v| window_pixel(v)).collect();
        let img = image::GrayImage::from_raw(nx as u32, ny as u32, px)
            .context("slice buffer does not match its dimensions")?;
        let path = dir.join(format!("slice_{z:03}.png"));
        img.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn load_pair(ap: &Path, lat: &Path) -> Result<(Projection<f32>, Projection<f32>)> {
    let ap = load_projection(ap)?;
    let lat = load_projection(lat)?;
    ensure!(
        ap.axis == Axis::Ap && lat.axis == Axis::Lat,
        "expected an AP and a LAT projection"
    );
    Ok((ap, lat))
}

fn write_volume(vol: &Volume<f32>, out: &Path, slices: Option<&Path>) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_volume(vol, out)?;
    if let Some(dir) = slices {
        export_slices(vol, dir)?;
    }
    Ok(())
}

pub fn cmd_reconstruct_init(
    ap: &Path,
    lat: &Path,
    out: &Path,
    slices: Option<&Path>,
) -> Result<()> {
    let (ap, lat) = load_pair(ap, lat)?;
    let model = ModelConfig {
        dims: ap.volume_dims,
        spacing: ap.volume_spacing,
        ..ModelConfig::desk()
    };
    let vol = initial_estimate(&ap, &lat, &model)?;
    write_volume(&vol, out, slices)
}

fn checkpoint_path(run_dir: &Path, stage: u8) -> PathBuf {
    run_dir.join(format!("stage{stage}.ckpt"))
}

fn load_training_volumes(data_dir: &Path) -> Result<Vec<Volume<f32>>> {
    let manifest = DatasetManifest::load(&data_dir.join(MANIFEST))
        .with_context(|| format!("reading the dataset in {}", data_dir.display()))?;
    let vols = manifest
        .paths(SplitTag::Train)
        .map(|p| load_volume(&data_dir.join(p)).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!vols.is_empty(), "the manifest lists no training volumes");
    Ok(vols)
}

fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("{what} checkpoint {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading {what} checkpoint"))
}

pub fn cmd_train(
    stage: u8,
    data_dir: &Path,
    run_dir: &Path,
    epochs: Option<usize>,
    resume: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(args.config.as_deref(), &args.sets)?;
    if let Some(e) = epochs {
        cfg.train_mut(stage).epochs = e;
    }
    cfg.validate()?;
    let coarse = if stage == 2 {
        Some(load_checkpoint(&checkpoint_path(run_dir, 1), "stage-1")?)
    } else {
        None
    };
    let volumes = load_training_volumes(data_dir)?;
    create_dir(run_dir)?;
    write_config(&cfg, &run_dir.join(format!("stage{stage}.config.toml")))?;

    let ckpt_path = checkpoint_path(run_dir, stage);
    let log_path = run_dir.join(format!("stage{stage}.log.csv"));
    let previous = if resume {
        Some(load_checkpoint(&ckpt_path, "resume")?)
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path)
                .with_context(|| format!("clearing {}", log_path.display()))?;
        }
        None
    };
    let train = cfg.train(stage).clone();
    match coarse {
        None => {
            let mut obs = FileObserver::new(&log_path, &ckpt_path, &STAGE1_COMPONENTS)?;
            let mut t = match &previous {
                Some(c) => Stage1::resume(train, &volumes, c)?,
                None => Stage1::new(cfg.model.clone(), train, &volumes)?,
            };
            while !t.is_done() {
                t.run_epoch(&mut obs)?;
                eprintln!("stage 1: epoch {} done", t.state().epoch);
            }
            t.checkpoint()?.save(&ckpt_path)?;
        }
        Some(coarse) => {
            let mut obs = FileObserver::new(&log_path, &ckpt_path, &STAGE2_COMPONENTS)?;
            let mut t = match &previous {
                Some(c) => Stage2::resume(train, &volumes, &coarse, c)?,
                None => Stage2::new(cfg.model.clone(), train, &volumes, &coarse)?,
            };
            while !t.is_done() {
                t.run_epoch(&mut obs)?;
                eprintln!("stage 2: epoch {} done", t.state().epoch);
            }
            t.checkpoint()?.save(&ckpt_path)?;
        }
    }
    Ok(())
}

/// Checkpoint paths for `reconstruct`.
#[derive(Debug)]
pub struct Checkpoints {
    pub coarse: PathBuf,
    pub refine: Option<PathBuf>,
}

impl Checkpoints {
    pub fn resolve(
        coarse: Option<PathBuf>,
        refine: Option<PathBuf>,
        coarse_only: bool,
        run_dir: Option<&Path>,
    ) -> Result<Self> {
        let from_run = |stage| {
            run_dir
                .map(|d| checkpoint_path(d, stage))
                .context("give the checkpoints explicitly or set --run-dir / ORTHOCT_RUN_DIR")
        };
        let coarse = match coarse {
            Some(c) => c,
            None => from_run(1)?,
        };
        let refine = match (refine, coarse_only) {
            (Some(r), _) => Some(r),
            (None, true) => None,
            (None, false) => Some(from_run(2)?),
        };
        Ok(Self { coarse, refine })
    }
}

pub fn cmd_reconstruct(
    ap: &Path,
    lat: &Path,
    ckpts: &Checkpoints,
    out: &Path,
    slices: Option<&Path>,
) -> Result<()> {
    let coarse = load_checkpoint(&ckpts.coarse, "stage-1")?;
    let refine = match &ckpts.refine {
        Some(p) => Some(load_checkpoint(p, "stage-2")?),
        None => None,
    };
    let (ap, lat) = load_pair(ap, lat)?;
    let net = Reconstructor::from_checkpoints(&coarse, refine.as_ref())?;
    let vol = net.reconstruct(&ap, &lat)?;
    write_volume(&vol, out, slices)
}

/// Volume files of `dir` keyed by file stem.
fn load_volume_dir(dir: &Path) -> Result<Vec<(String, Volume<f32>)>> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut paths = Vec::new();
    for e in entries {
        let path = e
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().is_some_and(|x| x == VOLUME_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| Ok((stem(p)?, load_volume(p)?)))
        .collect()
}

pub fn cmd_evaluate(pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<()> {
    let preds = load_volume_dir(pred_dir)?;
    let gts = load_volume_dir(gt_dir)?;
    let extractor = PerceptualExtractor::desk()?;
    let report = evaluate(&preds, &gts, &extractor)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))
}
