//! PGM image sequences on disk.

use std::path::{Path, PathBuf};

use featrack::synth::{relight, shifted_crop, Texture};
use featrack::Image;

use crate::InputError;

pub struct Frame {
    pub name: String,
    pub image: Image,
}

/// Every `.pgm` file in `dir`, in lexicographic file-name order. All frames
/// must share the first frame's dimensions.
pub fn load_sequence(dir: &Path) -> Result<Vec<Frame>, InputError> {
    let io = |source| InputError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(InputError::EmptySequence(dir.to_owned()));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let image = Image::read_pgm(&path).map_err(|source| InputError::Frame {
            frame: name.clone(),
            source,
        })?;
        if let Some(first) = frames.first() {
            let expected = (first.image.width(), first.image.height());
            let actual = (image.width(), image.height());
            if expected != actual {
                return Err(InputError::Dimensions {
                    frame: name,
                    expected,
                    actual,
                });
            }
        }
        frames.push(Frame { name, image });
    }
    Ok(frames)
}

/// Parameters of a synthetic camera pan over a mosaic texture.
#[derive(Clone, Copy, Debug)]
pub struct PanSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal camera motion in whole pixels per frame.
    pub speed: usize,
    pub seed: u64,
    /// Frame `i` is relit with gain `1 + a·sin(0.3·i)`.
    pub gain_amplitude: f64,
    /// Frame `i` is relit with offset `b·sin(0.2·i)`.
    pub offset_amplitude: f64,
}

impl Default for PanSpec {
    fn default() -> Self {
        Self {
            frames: 100,
            width: 752,
            height: 480,
            speed: 1,
            seed: 7,
            gain_amplitude: 0.0,
            offset_amplitude: 0.0,
        }
    }
}

/// Renders the pan in memory.
pub fn pan_sequence(spec: &PanSpec) -> Vec<Frame> {
    let canvas_w = spec.width + spec.frames * spec.speed + 1;
    let canvas = Texture::mosaic(spec.seed, canvas_w as f64, spec.height as f64).render(canvas_w, spec.height, 0.0, 0.0);
    (0..spec.frames)
        .map(|i| {
            let crop = shifted_crop(&canvas, spec.width, spec.height, (0, 0), (-((i * spec.speed) as i64), 0));
            let gain = 1.0 + spec.gain_amplitude * (0.3 * i as f64).sin();
            let offset = spec.offset_amplitude * (0.2 * i as f64).sin();
            Frame {
                name: format!("frame_{i:05}.pgm"),
                image: if gain == 1.0 && offset == 0.0 { crop } else { relight(&crop, gain, offset) },
            }
        })
        .collect()
}

/// Writes the pan as numbered PGM files into `dir`, creating it if needed.
pub fn write_pan_sequence(dir: &Path, spec: &PanSpec) -> Result<usize, InputError> {
    std::fs::create_dir_all(dir).map_err(|source| InputError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let frames = pan_sequence(spec);
    for f in &frames {
        let path = dir.join(&f.name);
        f.image.write_pgm(&path).map_err(|source| InputError::Frame {
            frame: f.name.clone(),
            source,
        })?;
    }
    Ok(frames.len())
}
