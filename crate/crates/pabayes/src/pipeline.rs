//! Command implementations behind the CLI.
//!
//! Dataset directory layout, written by [`cmd_simulate`]:
//!
//! ```text
//! out/
//!   manifest.json                  counts, splits, seed, grid, geometry
//!   phantoms/phantom_00000.tnsr    bundle { seg, img }        f64 [nz, nx]
//!   raw/raw_00000.tnsr             noisy channel data         f64 [elem, samples]
//!   mc/mc_00000.tnsr               network input               f32 [elem, nz, nx]
//! ```
//!
//! Posterior bundles (one per predicted input) hold every aggregated map
//! plus the credibility map, with a JSON sidecar recording K, kind, per-pass
//! seeds and the eps factor. All commands are deterministic for a fixed
//! config; `jobs` only distributes per-image work whose results are pure
//! functions of the image index.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::{
    add_noise, das_reconstruct, forward_project, ingest_fiber_average, mc_transform, McVolume,
    RawChannelData,
};
use crate::calibration::{
    coverage_report, credibility_map, optimal_scale, psnr, seg_accuracy, seg_uncertainty_cc,
    ReliabilityAccumulator,
};
use crate::config::RunConfig;
use crate::confidence::{confident_image, confident_segmentation, threshold_sweep};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::LossKind;
use crate::nn::train::{train_with_progress, write_loss_log, EpochLog, TrainSample};
use crate::nn::{build_network, Checkpoint};
use crate::parallel::parallel_map;
use crate::pgm;
use crate::phantom::{generate_dataset, Phantom};
use crate::rng::{derive_seed, DetRng};
use crate::tnsr::{Dtype, TnsrFile};
use crate::uncertainty::{aggregate, predict_mc, Posterior, PosteriorKind, UncertainMap};

pub const MANIFEST_VERSION: u32 = 1;

/// Seed substream tags (mixed with the image index).
const STREAM_NOISE: u64 = 1 << 32;
const STREAM_INIT: u64 = 2 << 32;
const STREAM_PREDICT: u64 = 3 << 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub seed: u64,
    pub grid: crate::grid::GridSpec,
    pub geometry: crate::acoustics::ArrayGeometry,
    pub phantom: crate::config::PhantomConfig,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Per-image SNR actually drawn (dB).
    pub snr_db: Vec<f64>,
}

fn phantom_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("phantoms").join(format!("phantom_{i:05}.tnsr"))
}
fn raw_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("raw").join(format!("raw_{i:05}.tnsr"))
}
fn mc_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("mc").join(format!("mc_{i:05}.tnsr"))
}

/// Simulate the dataset: phantoms, noisy raw traces, MC volumes, manifest.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    for sub in ["phantoms", "raw", "mc"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir, e))?;
    }
    let dataset = generate_dataset(cfg.phantom.count, &cfg.grid, &cfg.phantom.params, cfg.seed)?;

    let results = parallel_map(
        jobs,
        dataset.phantoms.iter().enumerate().collect::<Vec<_>>(),
        |_, (i, phantom)| -> Result<f64> {
            let raw = forward_project(phantom, &cfg.grid, &cfg.geometry)?;
            let mut rng = DetRng::new(derive_seed(cfg.seed, STREAM_NOISE + i as u64));
            let snr = rng.uniform(cfg.phantom.snr_db.0, cfg.phantom.snr_db.1);
            let noisy = add_noise(&raw, snr, rng.next_u64())?;
            let mc = mc_transform(&noisy, &cfg.grid, &cfg.geometry)?;

            TnsrFile::bundle(
                Dtype::F64,
                vec![cfg.grid.nz, cfg.grid.nx],
                vec![
                    ("img", phantom.image.data.clone()),
                    ("seg", phantom.segmentation.data.clone()),
                ],
            )?
            .write(&phantom_path(out_dir, i))?;
            TnsrFile::single(
                Dtype::F64,
                vec![cfg.geometry.n_elem, cfg.geometry.n_samples],
                noisy.traces,
            )?
            .write(&raw_path(out_dir, i))?;
            TnsrFile::single(
                Dtype::F32,
                vec![cfg.geometry.n_elem, cfg.grid.nz, cfg.grid.nx],
                mc.data,
            )?
            .write(&mc_path(out_dir, i))?;
            Ok(snr)
        },
    );
    let snr_db = results.into_iter().collect::<Result<Vec<f64>>>()?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        count: cfg.phantom.count,
        seed: cfg.seed,
        grid: cfg.grid,
        geometry: cfg.geometry,
        phantom: cfg.phantom,
        train_idx: dataset.train_idx,
        val_idx: dataset.val_idx,
        test_idx: dataset.test_idx,
        snr_db,
    };
    write_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

fn write_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::VersionMismatch {
            expected: MANIFEST_VERSION,
            got: manifest.format_version,
        });
    }
    Ok(manifest)
}

pub fn load_phantom(dir: &Path, i: usize) -> Result<Phantom> {
    let file = TnsrFile::read(&phantom_path(dir, i))?;
    Ok(Phantom {
        segmentation: file.grid("seg")?,
        image: file.grid("img")?,
    })
}

pub fn load_mc(dir: &Path, i: usize) -> Result<McVolume> {
    let file = TnsrFile::read(&mc_path(dir, i))?;
    if file.shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "MC volume file",
            expected: "3-d shape".into(),
            got: format!("{:?}", file.shape),
        });
    }
    Ok(McVolume {
        n_elem: file.shape[0],
        nz: file.shape[1],
        nx: file.shape[2],
        data: file.values()?.to_vec(),
    })
}

pub fn load_raw(path: &Path) -> Result<RawChannelData> {
    let file = TnsrFile::read(path)?;
    if file.shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "raw channel file",
            expected: "2-d shape [elements, samples]".into(),
            got: format!("{:?}", file.shape),
        });
    }
    Ok(RawChannelData {
        n_elem: file.shape[0],
        n_samples: file.shape[1],
        traces: file.values()?.to_vec(),
    })
}

/// Train on a simulated dataset; writes the best checkpoint and a CSV epoch
/// log next to it.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out_ckpt: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    let manifest = load_manifest(dataset_dir)?;
    if manifest.grid != cfg.grid || manifest.geometry != cfg.geometry {
        return Err(Error::InvalidConfig(
            "dataset grid/geometry does not match the run config".into(),
        ));
    }

    let load_split = |indices: &[usize]| -> Result<(Vec<McVolume>, Vec<Phantom>)> {
        let mut xs = Vec::with_capacity(indices.len());
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.push(load_mc(dataset_dir, i)?);
            ys.push(load_phantom(dataset_dir, i)?);
        }
        Ok((xs, ys))
    };
    let (train_x, train_y) = load_split(&manifest.train_idx)?;
    let (val_x, val_y) = load_split(&manifest.val_idx)?;

    fn to_samples<'a>(
        xs: &'a [McVolume],
        ys: &'a [Phantom],
        kind: LossKind,
    ) -> Vec<TrainSample<'a>> {
        xs.iter()
            .zip(ys)
            .map(|(x, p)| TrainSample {
                x,
                seg: kind.has_segmentation().then_some(&p.segmentation),
                img: &p.image,
            })
            .collect()
    }
    let train_samples = to_samples(&train_x, &train_y, cfg.loss);
    let val_samples = to_samples(&val_x, &val_y, cfg.loss);

    let init = build_network(
        &cfg.net,
        cfg.geometry.n_elem,
        derive_seed(cfg.train.seed, STREAM_INIT),
    )?;
    let (best, logs) = train_with_progress(
        init,
        &train_samples,
        &val_samples,
        cfg.loss,
        &cfg.train,
        &mut on_epoch,
    )?;
    if let Some(parent) = out_ckpt.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    best.save(out_ckpt)?;
    write_loss_log(&out_ckpt.with_extension("loss.csv"), &logs)?;
    Ok((best, logs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorManifest {
    pub format_version: u32,
    pub kind: PosteriorKind,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub eps_factor: f64,
    /// Dataset index (or 0 for single-file prediction).
    pub index: usize,
    pub source: String,
    pub cred_evaluated: usize,
    pub cred_excluded_nonpositive: usize,
}

pub fn posterior_paths(out_dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (
        out_dir.join(format!("posterior_{index:05}.tnsr")),
        out_dir.join(format!("posterior_{index:05}.json")),
    )
}

pub fn write_posterior(
    out_dir: &Path,
    index: usize,
    source: &str,
    posterior: &Posterior,
    credibility: &Grid,
    diag: crate::calibration::CredibilityDiag,
    eps_factor: f64,
) -> Result<()> {
    let (bundle_path, manifest_path) = posterior_paths(out_dir, index);
    let mut maps: Vec<(&str, Vec<f64>)> = vec![
        ("img_mean", posterior.img.mean.data.clone()),
        ("img_unc", posterior.img.unc.data.clone()),
        ("img_unc_data", posterior.img.data.data.clone()),
        ("img_unc_model", posterior.img.model.data.clone()),
        ("final_seg", posterior.final_seg.data.clone()),
        ("masked_img_mean", posterior.masked_img_mean.data.clone()),
        ("masked_img_unc", posterior.masked_img_unc.data.clone()),
        ("credibility", credibility.data.clone()),
    ];
    if let Some(seg) = &posterior.seg {
        maps.push(("seg_mean", seg.mean.data.clone()));
        maps.push(("seg_unc", seg.unc.data.clone()));
        maps.push(("seg_unc_data", seg.data.data.clone()));
        maps.push(("seg_unc_model", seg.model.data.clone()));
    }
    TnsrFile::bundle(
        Dtype::F64,
        vec![posterior.img.mean.nz, posterior.img.mean.nx],
        maps,
    )?
    .write(&bundle_path)?;

    let manifest = PosteriorManifest {
        format_version: MANIFEST_VERSION,
        kind: posterior.kind,
        k: posterior.k,
        seeds: posterior.seeds.clone(),
        eps_factor,
        index,
        source: source.to_string(),
        cred_evaluated: diag.evaluated,
        cred_excluded_nonpositive: diag.excluded_nonpositive,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_posterior(bundle_path: &Path) -> Result<(Posterior, Grid, PosteriorManifest)> {
    let manifest_path = bundle_path.with_extension("json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: PosteriorManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    let file = TnsrFile::read(bundle_path)?;
    let map = |name: &str| file.grid(name);
    let seg = if file.maps.contains_key("seg_mean") {
        Some(UncertainMap {
            mean: map("seg_mean")?,
            unc: map("seg_unc")?,
            data: map("seg_unc_data")?,
            model: map("seg_unc_model")?,
        })
    } else {
        None
    };
    let posterior = Posterior {
        seg,
        img: UncertainMap {
            mean: map("img_mean")?,
            unc: map("img_unc")?,
            data: map("img_unc_data")?,
            model: map("img_unc_model")?,
        },
        final_seg: map("final_seg")?,
        masked_img_mean: map("masked_img_mean")?,
        masked_img_unc: map("masked_img_unc")?,
        kind: manifest.kind,
        k: manifest.k,
        seeds: manifest.seeds.clone(),
    };
    Ok((posterior, map("credibility")?, manifest))
}

/// Monte-Carlo-dropout prediction over a dataset's test split, a directory
/// of MC volumes, or a single volume file.
pub fn cmd_predict(
    cfg: &RunConfig,
    ckpt_path: &Path,
    input: &Path,
    out_dir: &Path,
    jobs: usize,
) -> Result<usize> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // (index, source label, volume) triples
    let inputs: Vec<(usize, String, McVolume)> = if input.is_file() {
        let mc = load_mc_file(input)?;
        vec![(0, input.display().to_string(), mc)]
    } else if input.join("manifest.json").is_file() {
        let manifest = load_manifest(input)?;
        let mut list = Vec::new();
        for &i in &manifest.test_idx {
            list.push((i, mc_path(input, i).display().to_string(), load_mc(input, i)?));
        }
        list
    } else {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "tnsr"))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(Error::EmptyEvaluation("no .tnsr inputs in directory"));
        }
        let mut list = Vec::new();
        for (i, path) in entries.iter().enumerate() {
            list.push((i, path.display().to_string(), load_mc_file(path)?));
        }
        list
    };

    let n = inputs.len();
    let results = parallel_map(jobs, inputs, |_, (index, source, mc)| -> Result<()> {
        let stack = predict_mc(
            &ckpt,
            &mc,
            cfg.predict.k,
            derive_seed(cfg.predict.seed, STREAM_PREDICT + index as u64),
        )?;
        let posterior = aggregate(&stack, stack.kind)?;
        let (credibility, diag) = credibility_map(&stack, &posterior, cfg.calibration.eps_factor)?;
        write_posterior(
            out_dir,
            index,
            &source,
            &posterior,
            &credibility,
            diag,
            cfg.calibration.eps_factor,
        )
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(n)
}

fn load_mc_file(path: &Path) -> Result<McVolume> {
    let file = TnsrFile::read(path)?;
    if file.shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "MC volume file",
            expected: "3-d shape [elements, nz, nx]".into(),
            got: format!("{:?}", file.shape),
        });
    }
    Ok(McVolume {
        n_elem: file.shape[0],
        nz: file.shape[1],
        nx: file.shape[2],
        data: file.values()?.to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn from(values: &[f64]) -> Option<MeanStd> {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let n = finite.len();
        let mean = finite.iter().sum::<f64>() / n as f64;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
            n,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageReport {
    pub index: usize,
    pub psnr_db: Option<f64>,
    pub segmentation_accuracy: Option<f64>,
    pub segmentation_cc: Option<f64>,
    pub acc_vs_cred_cc: Option<f64>,
    pub acc_vs_cred_slope: Option<f64>,
    pub coverage_overall: Option<f64>,
    pub coverage_band: Option<f64>,
    pub uncertainty_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PooledReliability {
    pub cc: Option<f64>,
    pub slope: Option<f64>,
    pub total_pixels: usize,
    pub bins: Vec<BinRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinRow {
    pub cred: f64,
    pub acc: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub ground_truth_available: bool,
    pub images: Vec<ImageReport>,
    /// Table-style pooled rows (per-image mean and std).
    pub segmentation_accuracy: Option<MeanStd>,
    pub image_psnr_db: Option<MeanStd>,
    pub segmentation_cc: Option<MeanStd>,
    pub acc_vs_cred_cc: Option<MeanStd>,
    pub acc_vs_cred_slope: Option<MeanStd>,
    pub das_psnr_db: Option<MeanStd>,
    /// Pixel-pooled reliability diagram across the corpus.
    pub pooled_reliability: Option<PooledReliability>,
    pub pooled_coverage: Option<CoverageSummary>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoverageSummary {
    pub overall: f64,
    pub band: Option<f64>,
    pub evaluated: usize,
    pub band_count: usize,
}

fn scan_posteriors(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut bundles: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "tnsr")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("posterior_"))
        })
        .collect();
    bundles.sort();
    if bundles.is_empty() {
        return Err(Error::EmptyEvaluation("no posterior bundles in directory"));
    }
    Ok(bundles)
}

/// Calibration and image metrics over a directory of posterior bundles.
/// Without a dataset (no ground truth) the report is restricted to
/// uncertainty summaries and flagged accordingly.
pub fn cmd_calibrate(
    cfg: &RunConfig,
    posterior_dir: &Path,
    dataset_dir: Option<&Path>,
    out_report: &Path,
) -> Result<CalibrationReport> {
    let bundles = scan_posteriors(posterior_dir)?;
    let dataset = match dataset_dir {
        Some(dir) => Some((load_manifest(dir)?, dir)),
        None => None,
    };

    let mut images = Vec::new();
    let mut pooled_rel = ReliabilityAccumulator::new(cfg.calibration.bins)?;
    let mut pooled_cov_hits = 0usize;
    let mut pooled_cov_n = 0usize;
    let mut pooled_band_hits = 0usize;
    let mut pooled_band_n = 0usize;
    let mut das_psnrs = Vec::new();
    let mut gt_peak: f64 = 0.0;

    // Peak ground-truth value over the evaluated corpus, the PSNR reference.
    if let Some((_, dir)) = &dataset {
        for bundle in &bundles {
            let (_, _, manifest) = load_posterior(bundle)?;
            let phantom = load_phantom(dir, manifest.index)?;
            gt_peak = gt_peak.max(phantom.image.data.iter().cloned().fold(0.0, f64::max));
        }
    }

    for bundle in &bundles {
        let (posterior, credibility, manifest) = load_posterior(bundle)?;
        let gt = match &dataset {
            Some((_, dir)) => Some(load_phantom(dir, manifest.index)?),
            None => None,
        };
        let unc_mean = posterior.img.unc.data.iter().sum::<f64>()
            / posterior.img.unc.data.len() as f64;

        let mut report = ImageReport {
            index: manifest.index,
            psnr_db: None,
            segmentation_accuracy: None,
            segmentation_cc: None,
            acc_vs_cred_cc: None,
            acc_vs_cred_slope: None,
            coverage_overall: None,
            coverage_band: None,
            uncertainty_mean: unc_mean,
        };

        if let Some(gt) = &gt {
            report.psnr_db = Some(psnr(&posterior.masked_img_mean, &gt.image, gt_peak)?);
            if let Some(seg) = &posterior.seg {
                report.segmentation_accuracy =
                    Some(seg_accuracy(&posterior.final_seg, &gt.segmentation)?);
                report.segmentation_cc =
                    seg_uncertainty_cc(&seg.unc, &posterior.final_seg, &gt.segmentation)?;
            }
            let diagram = crate::calibration::reliability_diagram(
                &credibility,
                &posterior,
                &gt.image,
                cfg.calibration.bins,
                manifest.eps_factor,
            )?;
            report.acc_vs_cred_cc = diagram.cc;
            report.acc_vs_cred_slope = diagram.slope;
            pooled_rel.add(&credibility, &posterior, &gt.image, manifest.eps_factor)?;

            match coverage_report(&posterior, &gt.image) {
                Ok(cov) => {
                    report.coverage_overall = Some(cov.overall);
                    report.coverage_band = cov.band;
                    pooled_cov_hits += (cov.overall * cov.evaluated as f64).round() as usize;
                    pooled_cov_n += cov.evaluated;
                    if let Some(band) = cov.band {
                        pooled_band_hits += (band * cov.band_count as f64).round() as usize;
                        pooled_band_n += cov.band_count;
                    }
                }
                Err(Error::EmptyEvaluation(_)) => {}
                Err(e) => return Err(e),
            }

            // DAS baseline from the stored MC volume.
            if let Some((_, dir)) = &dataset {
                let mc = load_mc(dir, manifest.index)?;
                let das = das_reconstruct(&mc).magnitude();
                let scaled = das.map(|v| v * optimal_scale(&das, &gt.image));
                das_psnrs.push(psnr(&scaled, &gt.image, gt_peak)?);
            }
        }
        images.push(report);
    }

    let collect = |f: &dyn Fn(&ImageReport) -> Option<f64>| -> Vec<f64> {
        images.iter().filter_map(f).collect()
    };
    let ground_truth_available = dataset.is_some();
    let pooled = pooled_rel.finalize();
    let report = CalibrationReport {
        ground_truth_available,
        segmentation_accuracy: MeanStd::from(&collect(&|r| r.segmentation_accuracy)),
        image_psnr_db: MeanStd::from(&collect(&|r| r.psnr_db)),
        segmentation_cc: MeanStd::from(&collect(&|r| r.segmentation_cc)),
        acc_vs_cred_cc: MeanStd::from(&collect(&|r| r.acc_vs_cred_cc)),
        acc_vs_cred_slope: MeanStd::from(&collect(&|r| r.acc_vs_cred_slope)),
        das_psnr_db: MeanStd::from(&das_psnrs),
        pooled_reliability: ground_truth_available.then(|| PooledReliability {
            cc: pooled.cc,
            slope: pooled.slope,
            total_pixels: pooled.total_pixels,
            bins: pooled
                .bins
                .iter()
                .map(|b| BinRow {
                    cred: b.cred,
                    acc: b.acc,
                    count: b.count,
                })
                .collect(),
        }),
        pooled_coverage: (pooled_cov_n > 0).then(|| CoverageSummary {
            overall: pooled_cov_hits as f64 / pooled_cov_n as f64,
            band: (pooled_band_n > 0).then(|| pooled_band_hits as f64 / pooled_band_n as f64),
            evaluated: pooled_cov_n,
            band_count: pooled_band_n,
        }),
        images,
    };

    if let Some(parent) = out_report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(out_report, e))?;
    std::fs::write(out_report, text).map_err(|e| Error::io(out_report, e))?;
    if let Some(pooled) = &report.pooled_reliability {
        let mut csv = String::from("cred,acc,count\n");
        for bin in &pooled.bins {
            csv.push_str(&format!("{:.6},{:.6},{}\n", bin.cred, bin.acc, bin.count));
        }
        let csv_path = out_report.with_extension("bins.csv");
        std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(report)
}

/// Confidence processing of one posterior bundle; writes TNSR maps plus PGM
/// renderings (dB scale for images, linear for segmentations).
pub fn cmd_confidence(
    cfg: &RunConfig,
    posterior_path: &Path,
    sweep: Option<&[f64]>,
    out_dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (posterior, _, _) = load_posterior(posterior_path)?;
    let params = cfg.confidence;
    let conf_seg = confident_segmentation(&posterior, &params)?;
    TnsrFile::single(
        Dtype::F64,
        vec![conf_seg.nz, conf_seg.nx],
        conf_seg.data.clone(),
    )?
    .write(&out_dir.join("confident_seg.tnsr"))?;
    pgm::write_linear(&conf_seg, &out_dir.join("confident_seg.pgm"))?;

    let thresholds: Vec<f64> = match sweep {
        Some(list) => list.to_vec(),
        None => vec![params.img_rel_threshold],
    };
    let images = threshold_sweep(&posterior, &params, &thresholds)?;
    for (i, (threshold, image)) in thresholds.iter().zip(&images).enumerate() {
        let stem = format!("confident_img_{i:02}_thr_{threshold:.3}");
        TnsrFile::single(Dtype::F64, vec![image.nz, image.nx], image.data.clone())?
            .write(&out_dir.join(format!("{stem}.tnsr")))?;
        pgm::write_db_scaled(image, &out_dir.join(format!("{stem}.pgm")), pgm::DB_RANGE)?;
    }
    // Render the inputs of the processing chain as well.
    pgm::write_db_scaled(
        &posterior.masked_img_mean,
        &out_dir.join("masked_img_mean.pgm"),
        pgm::DB_RANGE,
    )?;
    if let Some(seg) = &posterior.seg {
        pgm::write_linear(&seg.mean, &out_dir.join("seg_mean.pgm"))?;
        pgm::write_linear(&seg.unc, &out_dir.join("seg_unc.pgm"))?;
    }
    let _ = confident_image(&posterior, &conf_seg, &params)?;
    Ok(images.len())
}

/// Beamform a raw channel file into MC volume + DAS image files.
pub fn cmd_beamform(cfg: &RunConfig, raw_file: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let raw = load_raw(raw_file)?;
    let mc = mc_transform(&raw, &cfg.grid, &cfg.geometry)?;
    let das = das_reconstruct(&mc);
    TnsrFile::single(
        Dtype::F32,
        vec![mc.n_elem, mc.nz, mc.nx],
        mc.data.clone(),
    )?
    .write(&out_dir.join("mc.tnsr"))?;
    TnsrFile::single(Dtype::F64, vec![das.values.nz, das.values.nx], das.values.data.clone())?
        .write(&out_dir.join("das.tnsr"))?;
    pgm::write_db_scaled(&das.magnitude(), &out_dir.join("das.pgm"), pgm::DB_RANGE)?;
    Ok(())
}

/// Ingest an externally recorded raw frame shaped [samples, elements,
/// fibers]: average the fiber axis, then beamform.
pub fn cmd_ingest(cfg: &RunConfig, raw_file: &Path, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let file = TnsrFile::read(raw_file)?;
    if file.shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "ingest raw frame",
            expected: "3-d shape [samples, elements, fibers]".into(),
            got: format!("{:?}", file.shape),
        });
    }
    let (n_samples, n_elem, n_fibers) = (file.shape[0], file.shape[1], file.shape[2]);
    let raw = ingest_fiber_average(file.values()?, n_samples, n_elem, n_fibers)?;
    TnsrFile::single(Dtype::F64, vec![n_elem, n_samples], raw.traces.clone())?
        .write(&out_dir.join("raw_averaged.tnsr"))?;
    let mc = mc_transform(&raw, &cfg.grid, &cfg.geometry)?;
    let das = das_reconstruct(&mc);
    TnsrFile::single(Dtype::F32, vec![mc.n_elem, mc.nz, mc.nx], mc.data.clone())?
        .write(&out_dir.join("mc.tnsr"))?;
    TnsrFile::single(Dtype::F64, vec![das.values.nz, das.values.nx], das.values.data.clone())?
        .write(&out_dir.join("das.tnsr"))?;
    Ok(())
}

/// Gradient checks of all three losses on a tiny double-precision network.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<(String, bool)> {
    use crate::nn::gradcheck::gradient_check;
    use crate::nn::HeadKind;
    let tiny = |head: HeadKind| crate::nn::NetConfig {
        depth: 1,
        base_channels: 2,
        head,
        dropout_rate: cfg.net.dropout_rate,
        leaky_slope: cfg.net.leaky_slope,
        l2_factor: cfg.net.l2_factor,
        sigma_floor: cfg.net.sigma_floor,
    };
    let mut out = String::new();
    let mut all_pass = true;
    for (head, kind) in [
        (HeadKind::Hybrid, LossKind::HybridLaplace),
        (HeadKind::LaplaceOnly, LossKind::LaplaceOnly),
        (HeadKind::Hybrid, LossKind::HybridGauss),
    ] {
        let report = gradient_check(&tiny(head), kind, 1e-4, corrupt)?;
        all_pass &= report.passed;
        out.push_str(&report.render());
    }
    Ok((out, all_pass))
}

