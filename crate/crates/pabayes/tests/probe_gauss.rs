//! Probe: gaussian-variant training budgets (temporary build aid).
use pabayes::losses::LossKind;
use pabayes::nn::HeadKind;
use pabayes::pipeline;
use std::path::Path;

fn desk_config() -> pabayes::config::RunConfig {
    let mut cfg = pabayes::config::RunConfig::desk_scale();
    cfg.phantom.count = 500;
    cfg.net.depth = 2;
    cfg.net.base_channels = 8;
    cfg.train.learning_rate = 1e-3;
    cfg.train.max_epochs = 30;
    cfg.train.patience = 10;
    cfg.train.seed = 11;
    cfg.predict.k = 24;
    cfg.predict.seed = 99;
    cfg.seed = 20260808;
    cfg
}

#[test]
#[ignore]
fn probe_gauss_budgets() {
    let base = Path::new("/tmp/pabayes-acceptance");
    let data = base.join("dataset");
    assert!(data.join("manifest.json").is_file(), "run the desk acceptance first");

    for (label, lr, epochs) in [("gauss-lr5e3-e90", 5e-3, 90usize)] {
        let mut cfg = desk_config();
        cfg.net.head = HeadKind::Hybrid;
        cfg.loss = LossKind::HybridGauss;
        cfg.train.learning_rate = lr;
        cfg.train.max_epochs = epochs;
        cfg.train.patience = 20;
        let ckpt = base.join(format!("{label}.ckpt"));
        let t0 = std::time::Instant::now();
        pipeline::cmd_train(&cfg, &data, &ckpt, |l| {
            eprintln!("[{label}] epoch {:3} train {:9.2} val {:9.2}", l.epoch, l.train_loss, l.val_loss);
        }).unwrap();
        let post = base.join(format!("post-{label}"));
        pipeline::cmd_predict(&cfg, &ckpt, &data, &post, 1).unwrap();
        let report = pipeline::cmd_calibrate(&cfg, &post, Some(&data), &base.join(format!("report-{label}.json"))).unwrap();
        println!("{label}: seg_acc {:.4} psnr {:.2} dB cc {:?} ({:.0}s)",
            report.segmentation_accuracy.as_ref().unwrap().mean,
            report.image_psnr_db.as_ref().unwrap().mean,
            report.pooled_reliability.as_ref().unwrap().cc,
            t0.elapsed().as_secs_f64());
    }
}
