use contour_core::acm::AcmConfig;
use contour_core::autodiff::{BatchNormMode, Tape};
use contour_core::backbone::{load_checkpoint, save_checkpoint, Backbone, BackboneConfig, LambdaMode};
use contour_core::data::{load_folder, synth_generate, write_dataset, Sample, ShapeFamily, SynthSpec};
use contour_core::metrics::Mask;
use contour_core::training::{infer, soft_dice_loss, train, LogRecord, TrainConfig, TrainOptions};
use contour_core::{Grid2D, Tensor};

fn disk_sample(n: usize) -> Sample {
    let c = (n as f64 - 1.0) / 2.0;
    let mask = Mask::from_fn(n, n, |i, j| (i as f64 - c).powi(2) + (j as f64 - c).powi(2) <= (n as f64 / 4.0).powi(2));
    let image = Grid2D::from_fn2(n, n, |i, j| if mask.get(i, j) { 0.8 } else { 0.2 });
    Sample::new("disk", image, mask).unwrap()
}

#[test]
fn forward_is_finite_for_many_seeds() {
    let net = Backbone::new(BackboneConfig::default()).unwrap();
    let x = Tensor::from_fn2(32, 32, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0).reshape(&[1, 1, 32, 32]).unwrap();
    for seed in 0..4 {
        let mut store = net.init::<f64>(seed).unwrap();
        let (l1, l2, p0) = net.predict(&mut store, &x, BatchNormMode::Train).unwrap();
        for t in [&l1, &l2, &p0] {
            assert!(t.first_non_finite().is_none(), "seed {seed}");
            assert_eq!(t.shape(), &[1, 1, 32, 32]);
        }
        assert!(l1.data().iter().chain(l2.data()).all(|&v| v > 0.0));
        assert!(p0.data().iter().all(|v| v.abs() <= 50.0));
    }
}

#[test]
fn checkpoint_round_trip_preserves_forward() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [LambdaMode::Maps, LambdaMode::ConstLambda] {
        let net = Backbone::new(BackboneConfig { lambda_mode: mode, ..BackboneConfig::tiny() }).unwrap();
        let mut store = net.init::<f32>(9).unwrap();
        let x = Tensor::from_fn2(16, 16, |i, j| ((i + 2 * j) % 5) as f32 / 4.0).reshape(&[1, 1, 16, 16]).unwrap();
        // move the running statistics away from their initial values
        net.predict(&mut store, &x, BatchNormMode::Train).unwrap();
        let path = dir.path().join(format!("{mode:?}"));
        save_checkpoint(&store, &path, &serde_json::json!({"note": "test"}), 9).unwrap();
        let (mut loaded, manifest) = load_checkpoint::<f32>(&path, &net.layout()).unwrap();
        assert_eq!(manifest.seed, 9);
        assert_eq!(loaded, store);
        let a = net.predict(&mut store, &x, BatchNormMode::Eval).unwrap();
        let b = net.predict(&mut loaded, &x, BatchNormMode::Eval).unwrap();
        assert_eq!(a, b);
        assert!(load_checkpoint::<f64>(&path, &net.layout()).is_err());
    }
}

#[test]
fn receptive_field_spans_the_input() {
    // a change in one corner reaches the opposite corner of the output
    let net = Backbone::new(BackboneConfig::default()).unwrap();
    let mut store = net.init::<f64>(1).unwrap();
    let n = 64;
    let x = Tensor::<f64>::full(&[1, 1, n, n], 0.3);
    let mut y = x.clone();
    y.data_mut()[0] = 0.9;
    let (_, _, a) = net.predict(&mut store, &x, BatchNormMode::Eval).unwrap();
    let (_, _, b) = net.predict(&mut store, &y, BatchNormMode::Eval).unwrap();
    assert_ne!(a.data()[n * n - 1], b.data()[n * n - 1]);
}

#[test]
fn overfits_one_disk() {
    let s = disk_sample(32);
    let cfg = TrainConfig { epochs: 200, batch_size: 1, lr_decay_every: 1000, deterministic: true, ..TrainConfig::default() };
    let out = train::<f32>(std::slice::from_ref(&s), &[], &BackboneConfig::default(), &AcmConfig::default(), &cfg, &TrainOptions::default()).unwrap();
    let losses: Vec<f64> = out.log.iter().filter_map(|r| if let LogRecord::Step(s) = r { Some(s.loss) } else { None }).collect();
    assert_eq!(losses.len(), 200);
    assert!(losses[199] < 0.05, "final loss {}", losses[199]);
    assert!(losses.iter().all(|l| (0.0..=1.0).contains(l)));
}

#[test]
fn infer_mask_is_thresholded_probability() {
    let net = Backbone::new(BackboneConfig::tiny()).unwrap();
    let mut store = net.init::<f64>(2).unwrap();
    let s = disk_sample(21);
    let out = infer(&net, &mut store, &s.image, &AcmConfig { iterations: 10, ..AcmConfig::default() }, true).unwrap();
    assert_eq!((out.mask.height(), out.mask.width()), (21, 21));
    assert_eq!(out.phi0.spatial(), (21, 21));
    for (k, &p) in out.phi_n.data().iter().enumerate() {
        let tape = Tape::<f64>::new();
        let prob = tape.constant(Tensor::scalar(p)).sigmoid().item();
        assert_eq!(out.mask.data()[k], prob > 0.5);
    }
}

#[test]
fn dice_loss_of_perfect_prediction_is_zero() {
    let tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::from_fn2(4, 4, |i, _| (i % 2) as f64).reshape(&[1, 1, 4, 4]).unwrap());
    assert_eq!(soft_dice_loss(g, g).unwrap().item(), 0.0);
}

#[test]
fn synthetic_dataset_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { images: 6, size: 32, shapes: ShapeFamily::Mixed, min_radius: 3.0, max_radius: 6.0, ..SynthSpec::default() };
    let samples = synth_generate(&spec).unwrap();
    write_dataset(&samples, dir.path(), None).unwrap();
    let loaded = load_folder(dir.path()).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.instances.as_ref().map(|l| l.count()), b.instances.as_ref().map(|l| l.count()));
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
