//! Inspect the trained gaussian model's head statistics (build aid).
use pabayes::nn::{Checkpoint, ForwardMode};
use pabayes::pipeline;
use std::path::Path;

#[test]
#[ignore]
fn inspect_gauss_heads() {
    let base = Path::new("/tmp/pabayes-acceptance");
    let data = base.join("dataset");
    let manifest = pipeline::load_manifest(&data).unwrap();
    let idx = manifest.test_idx[0];
    let mc = pipeline::load_mc(&data, idx).unwrap();
    let gt = pipeline::load_phantom(&data, idx).unwrap();
    for name in ["gauss-lr2e3-e40.ckpt", "hybrid.ckpt"] {
        let ckpt = Checkpoint::load(&base.join(name)).unwrap();
        let maps = &ckpt.forward(&[&mc], ForwardMode::Deterministic, 0).unwrap()[0];
        let mu1 = maps.mu1.as_ref().unwrap();
        let n_over = mu1.data.iter().filter(|&&v| v > 0.5).count();
        let mu1_max = mu1.data.iter().cloned().fold(0.0f64, f64::max);
        let mu2_min = maps.mu2.data.iter().cloned().fold(f64::MAX, f64::min);
        let mu2_max = maps.mu2.data.iter().cloned().fold(f64::MIN, f64::max);
        let sg_min = maps.sigma.data.iter().cloned().fold(f64::MAX, f64::min);
        let sg_max = maps.sigma.data.iter().cloned().fold(f64::MIN, f64::max);
        let fg = gt.segmentation.data.iter().filter(|&&v| v > 0.0).count();
        println!("{name}: mu1>0.5 at {n_over}/{} px (gt fg {fg}), mu1_max {mu1_max:.4}, mu2 [{mu2_min:.3},{mu2_max:.3}], sigma [{sg_min:.5},{sg_max:.3}]",
            mu1.data.len());
    }
}
