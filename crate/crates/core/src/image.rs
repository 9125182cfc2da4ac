//! Pitched 8-bit grayscale images, halving pyramids and bilinear sampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Row pitch alignment in elements.
pub const STRIDE_ALIGN: usize = 32;

/// Smallest side length any pyramid level may have (the 8×8 tracking patch must fit).
pub const MIN_LEVEL_SIDE: usize = 8;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("pyramid needs at least one level")]
    NoLevels,
    #[error(
        "{width}x{height} image is too small for {levels} levels (coarsest side would be {coarsest} < {min})"
    )]
    DimensionTooSmall {
        width: usize,
        height: usize,
        levels: usize,
        coarsest: usize,
        min: usize,
    },
    #[error("sample position ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rounds `width` up to the next multiple of [`STRIDE_ALIGN`].
pub fn aligned_stride(width: usize) -> usize {
    width.div_ceil(STRIDE_ALIGN) * STRIDE_ALIGN
}

/// 8-bit grayscale raster in a pitched, row-major layout.
///
/// The stride is always a multiple of 32 and padding bytes are zero.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    stride: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("stride", &self.stride)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        let stride = aligned_stride(width);
        let mut data = vec![0u8; stride * height];
        for (y, row) in data.chunks_exact_mut(stride).enumerate() {
            for (x, px) in row[..width].iter_mut().enumerate() {
                *px = f(x, y);
            }
        }
        Ok(Self {
            width,
            height,
            stride,
            data,
        })
    }

    /// Copies a tightly packed row-major buffer into a pitched image.
    pub fn from_packed(width: usize, height: usize, pixels: &[u8]) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::DataLength {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Self::from_fn(width, height, |x, y| pixels[y * width + x])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Raw pitched buffer, `stride * height` bytes.
    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.stride + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        assert!(x < self.width && y < self.height);
        self.data[y * self.stride + x] = value;
    }

    /// The `width` valid pixels of row `y`.
    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        let start = y * self.stride;
        &self.data[start..start + self.width]
    }

    pub fn to_packed(&self) -> Vec<u8> {
        (0..self.height).flat_map(|y| self.row(y).iter().copied()).collect()
    }

    /// Parses a binary (P5) PGM with maxval 255.
    pub fn parse_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            // whitespace and comments between header tokens
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Pgm("truncated header".into()));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
                ImageError::Pgm("non-ASCII header".into())
            })?);
        }
        if tokens[0] != "P5" {
            return Err(ImageError::Pgm(format!(
                "unsupported magic {:?}, expected P5",
                tokens[0]
            )));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::Pgm(format!("invalid {what} {s:?}")))
        };
        let width = parse(tokens[1], "width")?;
        let height = parse(tokens[2], "height")?;
        let maxval = parse(tokens[3], "maxval")?;
        if maxval != 255 {
            return Err(ImageError::Pgm(format!("maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(ImageError::Pgm("missing raster".into()));
        }
        pos += 1;
        let raster = &bytes[pos..];
        if raster.len() < width * height {
            return Err(ImageError::Pgm(format!(
                "raster has {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        Self::from_packed(width, height, &raster[..width * height])
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::parse_pgm(&fs::read(path)?)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for y in 0..self.height {
            out.extend_from_slice(self.row(y));
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.encode_pgm())?;
        Ok(())
    }

    /// Halves the resolution with a rounded 2×2 box average; odd trailing
    /// rows and columns are dropped.
    pub fn downsample(&self) -> Result<Self, ImageError> {
        let w = self.width / 2;
        let h = self.height / 2;
        Self::from_fn(w, h, |x, y| {
            let top = &self.data[2 * y * self.stride..];
            let bottom = &self.data[(2 * y + 1) * self.stride..];
            let sum = top[2 * x] as u16
                + top[2 * x + 1] as u16
                + bottom[2 * x] as u16
                + bottom[2 * x + 1] as u16;
            ((sum + 2) >> 2) as u8
        })
    }

    /// Bilinear sample without range checks. Callers guarantee
    /// `0 <= x <= width - 1` and `0 <= y <= height - 1`.
    #[inline]
    pub fn sample_unchecked(&self, x: f64, y: f64) -> f64 {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        top + fy * (bottom - top)
    }

    #[inline]
    pub fn contains_subpixel(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Bilinear interpolation of the four pixels around `(x, y)`.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> Result<f64, ImageError> {
    if !img.contains_subpixel(x, y) {
        return Err(ImageError::OutOfBounds {
            x,
            y,
            width: img.width,
            height: img.height,
        });
    }
    Ok(img.sample_unchecked(x, y))
}

/// Image pyramid, level 0 at full resolution, each further level halved.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    levels: Vec<Image>,
}

impl ImagePyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &Image {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn base(&self) -> &Image {
        &self.levels[0]
    }
}

/// Builds a pyramid whose coarsest level still has both sides ≥ 8.
pub fn build_pyramid(img: &Image, num_levels: usize) -> Result<ImagePyramid, ImageError> {
    build_pyramid_with_min_side(img, num_levels, MIN_LEVEL_SIDE)
}

/// Like [`build_pyramid`] with a caller-chosen minimum level side.
pub fn build_pyramid_with_min_side(
    img: &Image,
    num_levels: usize,
    min_side: usize,
) -> Result<ImagePyramid, ImageError> {
    if num_levels == 0 {
        return Err(ImageError::NoLevels);
    }
    let shift = num_levels - 1;
    let coarsest = if shift >= usize::BITS as usize {
        0
    } else {
        img.width.min(img.height) >> shift
    };
    if coarsest < min_side.max(1) {
        return Err(ImageError::DimensionTooSmall {
            width: img.width,
            height: img.height,
            levels: num_levels,
            coarsest,
            min: min_side.max(1),
        });
    }
    let mut levels = Vec::with_capacity(num_levels);
    levels.push(img.clone());
    for k in 1..num_levels {
        let next = levels[k - 1].downsample()?;
        levels.push(next);
    }
    Ok(ImagePyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stride_is_aligned_and_padding_zero() {
        let img = Image::filled(33, 3, 7).unwrap();
        assert_eq!(img.stride(), 64);
        assert_eq!(img.as_raw().len(), 64 * 3);
        assert!(img.as_raw()[33..64].iter().all(|&b| b == 0));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Image::filled(0, 4, 0),
            Err(ImageError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn constant_pyramid_stays_constant() {
        let img = Image::filled(64, 64, 100).unwrap();
        let pyr = build_pyramid(&img, 3).unwrap();
        assert_eq!(pyr.num_levels(), 3);
        assert_eq!((pyr.level(1).width(), pyr.level(1).height()), (32, 32));
        assert_eq!((pyr.level(2).width(), pyr.level(2).height()), (16, 16));
        for lvl in pyr.levels() {
            for y in 0..lvl.height() {
                assert!(lvl.row(y).iter().all(|&v| v == 100));
            }
        }
    }

    #[test]
    fn two_by_two_block_mean() {
        let img = Image::from_packed(2, 2, &[0, 2, 4, 6]).unwrap();
        let pyr = build_pyramid_with_min_side(&img, 2, 1).unwrap();
        assert_eq!(pyr.level(1).to_packed(), vec![3]);
    }

    #[test]
    fn odd_checkerboard_matches_block_mean_oracle() {
        let img = Image::from_fn(5, 5, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 }).unwrap();
        let pyr = build_pyramid_with_min_side(&img, 2, 1).unwrap();
        let lvl = pyr.level(1);
        assert_eq!((lvl.width(), lvl.height()), (2, 2));
        for y in 0..2 {
            for x in 0..2 {
                let mut sum = 0u32;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    sum += img.get(2 * x + dx, 2 * y + dy) as u32;
                }
                // 510 / 4 = 127.5 rounds half up
                let expected = (sum as f64 / 4.0 + 0.5).floor() as u8;
                assert_eq!(lvl.get(x, y), expected);
                assert_eq!(expected, 128);
            }
        }
    }

    #[test]
    fn pyramid_too_small() {
        let img = Image::filled(40, 30, 0).unwrap();
        assert!(build_pyramid(&img, 2).is_ok());
        assert!(matches!(
            build_pyramid(&img, 3),
            Err(ImageError::DimensionTooSmall { coarsest: 7, .. })
        ));
        assert!(matches!(build_pyramid(&img, 0), Err(ImageError::NoLevels)));
    }

    #[test]
    fn bilinear_examples() {
        let img = Image::from_packed(3, 2, &[10, 20, 30, 40, 50, 60]).unwrap();
        assert_eq!(sample_bilinear(&img, 2.0, 1.0).unwrap(), 60.0);
        assert_eq!(sample_bilinear(&img, 0.5, 0.0).unwrap(), 15.0);

        let block = Image::from_packed(2, 2, &[0, 100, 50, 150]).unwrap();
        // top row 0→100 at 0.25: 25; bottom row 50→150 at 0.25: 75; 0.75 of the way down: 62.5
        assert_eq!(sample_bilinear(&block, 0.25, 0.75).unwrap(), 62.5);
    }

    #[test]
    fn bilinear_out_of_bounds() {
        let img = Image::filled(4, 4, 1).unwrap();
        assert!(sample_bilinear(&img, 3.0, 3.0).is_ok());
        assert!(sample_bilinear(&img, 3.0001, 0.0).is_err());
        assert!(sample_bilinear(&img, -0.1, 0.0).is_err());
    }

    #[test]
    fn pgm_roundtrip_with_comment() {
        let img = Image::from_fn(5, 3, |x, y| (x * 40 + y) as u8).unwrap();
        let mut bytes = b"P5\n# made by hand\n5 3\n255\n".to_vec();
        bytes.extend(img.to_packed());
        assert_eq!(Image::parse_pgm(&bytes).unwrap(), img);
        assert_eq!(Image::parse_pgm(&img.encode_pgm()).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(Image::parse_pgm(b"P2\n2 2\n255\n0 0 0 0").is_err());
        assert!(Image::parse_pgm(b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").is_err());
        assert!(Image::parse_pgm(b"P5\n2 2\n255\n\0\0").is_err());
        assert!(Image::parse_pgm(b"P5\n2").is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (2usize..40, 2usize..40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| Image::from_packed(w, h, &px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pyramid_pixels_within_block_range(img in arb_image()) {
            let pyr = build_pyramid_with_min_side(&img, 2, 1).unwrap();
            let lvl = pyr.level(1);
            prop_assert_eq!(lvl.width(), img.width() / 2);
            prop_assert_eq!(lvl.height(), img.height() / 2);
            for y in 0..lvl.height() {
                for x in 0..lvl.width() {
                    let block = [
                        img.get(2 * x, 2 * y),
                        img.get(2 * x + 1, 2 * y),
                        img.get(2 * x, 2 * y + 1),
                        img.get(2 * x + 1, 2 * y + 1),
                    ];
                    let v = lvl.get(x, y);
                    prop_assert!(v >= *block.iter().min().unwrap());
                    prop_assert!(v <= *block.iter().max().unwrap());
                }
            }
        }

        #[test]
        fn bilinear_is_continuous(img in arb_image(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let x = fx * (img.width() - 1) as f64;
            let y = fy * (img.height() - 1) as f64;
            let a = sample_bilinear(&img, x, y).unwrap();
            let x2 = (x + 5e-7).min((img.width() - 1) as f64);
            let y2 = (y + 5e-7).min((img.height() - 1) as f64);
            let b = sample_bilinear(&img, x2, y2).unwrap();
            prop_assert!((a - b).abs() < 255.0 * 1e-5);
        }
    }
}
