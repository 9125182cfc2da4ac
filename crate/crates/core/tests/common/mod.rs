#![allow(dead_code)]

use std::path::PathBuf;

use featrack::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn testdata_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata")
}

/// The five natural-image fixtures (376×240 grayscale photographs).
pub fn natural_frames() -> Vec<(String, Image)> {
    let mut paths: Vec<_> = std::fs::read_dir(testdata_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    assert_eq!(paths.len(), 5, "expected five fixture frames");
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, Image::read_pgm(&p).unwrap())
        })
        .collect()
}

pub fn noise_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.gen()).unwrap()
}
