use skd_core::dataset::{self, Split};
use skd_core::synth::{self, FIXATIONS_PER_FRAME};
use skd_core::{Error, Tensor32};

#[test]
fn corpus_is_deterministic_per_seed() {
    let a = synth::generate_synthetic_corpus(3, 4, 32, 5).unwrap();
    let b = synth::generate_synthetic_corpus(3, 4, 32, 5).unwrap();
    let c = synth::generate_synthetic_corpus(3, 4, 32, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn fixation_rate_stays_in_band() {
    let clips = synth::generate_synthetic_corpus(100, 5, 32, 0).unwrap();
    let counts: Vec<usize> = clips.iter().flat_map(|c| c.fixations.iter().map(Vec::len)).collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let mid = (*FIXATIONS_PER_FRAME.start() + *FIXATIONS_PER_FRAME.end()) as f64 / 2.0;
    assert!((mean - mid).abs() < 0.5, "mean fixations per frame {mean}");
    assert!(counts.iter().all(|n| FIXATIONS_PER_FRAME.contains(n)));
}

#[test]
fn density_peaks_sit_on_bright_blobs() {
    let clips = synth::generate_synthetic_corpus(20, 3, 32, 1).unwrap();
    for clip in &clips {
        for (frame, density) in clip.frames.iter().zip(&clip.density) {
            let peaks = synth::density_peaks(density, 0.99);
            assert!(!peaks.is_empty());
            for (x, y) in peaks {
                let lum: f32 = (0..3).map(|c| frame.data()[(c * 32 + y) * 32 + x]).sum::<f32>() / 3.0;
                assert!(lum > 0.6, "peak at ({x}, {y}) has luminance {lum}");
            }
        }
    }
}

#[test]
fn temporal_teacher_is_dimmer_than_spatial() {
    // speed weights are at most one, so the motion map never exceeds the appearance map by much
    let clip = synth::generate_clip(6, 32, 3).unwrap();
    for (t, s) in clip.teacher_t.iter().zip(&clip.teacher_s) {
        assert!(t.sum_f64() <= s.sum_f64() + 1e-6);
    }
}

#[test]
fn degrade_refuses_upsampling() {
    let x = Tensor32::ones(&[1, 3, 32, 32]);
    assert_eq!(dataset::degrade(&x, 8).unwrap().shape(), &[1, 3, 8, 8]);
    assert!(matches!(dataset::degrade(&x, 64), Err(Error::Range(_))));
}

#[test]
fn samples_degrade_every_stream() {
    let clips = synth::generate_synthetic_corpus(4, 3, 64, 2).unwrap();
    let s = dataset::split_samples(&clips, Split::Train, 0, 32).unwrap();
    assert_eq!(s.len(), 3 * 2);
    for x in &s {
        assert_eq!(x.frame.shape(), &[1, 3, 32, 32]);
        assert_eq!(x.pair().shape(), &[1, 6, 32, 32]);
        assert_eq!(x.density.shape(), &[1, 1, 32, 32]);
        assert!(x.fixations.iter().all(|&(a, b)| a < 32 && b < 32));
    }
}

#[test]
fn corpus_directory_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let clips = synth::generate_synthetic_corpus(3, 3, 16, 4).unwrap();
    dataset::save_corpus(dir.path(), &clips).unwrap();
    let back = dataset::load_corpus(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[2].density, clips[2].density);
    assert!(dataset::load_corpus(dir.path().join("clip_0000/frames")).is_err());
}
