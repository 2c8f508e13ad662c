use pinsert_core::datasynth::{build_dataset, read_dataset, write_dataset, DatasetConfig};
use pinsert_core::latent::{pool_pointmap, weight_map};
use pinsert_core::losses::{etd_loss, fm_loss, noisy_latent, pa_loss, total_loss, velocity_target, StopGrad};
use pinsert_core::pointmap::rasterize_points;
use pinsert_core::{Dims, LatentCodec, LatentTensor, SamplingPolicy, SeededRng};
use proptest::prelude::*;

fn latent(d: Dims, vals: &[f32]) -> LatentTensor {
    LatentTensor::new(d, vals.iter().cycle().take(d.len()).copied().collect()).unwrap()
}

const D: Dims = Dims { frames: 1, height: 2, width: 2, channels: 16 };

proptest! {
    #[test]
    fn noisy_latent_moves_along_velocity(
        z in prop::collection::vec(-3f32..3.0, 64),
        e in prop::collection::vec(-3f32..3.0, 64),
        t in 0f64..=1.0,
    ) {
        let (z, e) = (latent(D, &z), latent(D, &e));
        let zt = noisy_latent(&z, &e, t).unwrap();
        let v = velocity_target(&z, &e).unwrap();
        for i in 0..D.len() {
            let want = z.data()[i] as f64 + t * v.data()[i] as f64;
            prop_assert!((zt.data()[i] as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_on_agreement(
        a in prop::collection::vec(-3f32..3.0, 64),
        b in prop::collection::vec(-3f32..3.0, 64),
        w in prop::collection::vec(0f32..=1.0, 64),
    ) {
        let (a, b) = (latent(D, &a), latent(D, &b));
        let w = weight_map(&latent(D, &w)).unwrap();
        prop_assert!(w.data().iter().all(|&x| (0.0..=0.5).contains(&x)));
        let fm = fm_loss(&a, &b).unwrap();
        let etd = etd_loss(&a, &StopGrad::new(b.clone())).unwrap();
        let pa = pa_loss(&a, &b, &w).unwrap();
        prop_assert!(fm >= 0.0 && pa >= 0.0 && pa <= fm / 4.0 + 1e-9);
        prop_assert!((fm - etd).abs() < 1e-12);
        prop_assert_eq!(fm_loss(&a, &a).unwrap(), 0.0);
        let total = total_loss(fm, etd, pa, 1.5, 1.2).unwrap();
        prop_assert!((total.total - (fm + 1.5 * etd + 1.2 * pa)).abs() < 1e-9);
    }
}

#[test]
fn dataset_survives_disk_and_feeds_the_codec() {
    let cfg = DatasetConfig { count: 3, stage: 2, frames: 5, height: 32, width: 32, ..Default::default() };
    let ds = build_dataset(&cfg, &SamplingPolicy::default(), &SeededRng::new(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.pairs, ds.pairs);

    let codec = LatentCodec::from_seed(3, back.manifest.codec_seed).unwrap();
    for pair in &back.pairs {
        let z = codec.encode_video(&pair.target).unwrap();
        assert_eq!(z.dims(), Dims::new(2, 4, 4, 16));
        let pm = rasterize_points(&pair.annotations, pair.target.dims()).unwrap();
        assert_eq!(pm, pair.guidance);
        assert_eq!(pool_pointmap(&pm).unwrap().dims(), z.dims());
    }
}
