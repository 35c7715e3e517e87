//! Deterministic procedural stand-in for a text-to-image model.
//!
//! Pixels depend only on `(prompt, seed, size)`: SHA-256 of those inputs seeds
//! a ChaCha8 stream that drives integer-only rendering of a two-color gradient
//! with layered rectangles and discs. No floating point is involved, so the
//! output is byte-identical on every platform.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GenerateError, GeneratedImage, GeneratorBackend, ImageSize};

pub const MOCK_VERSION: &str = "procedural-1";

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl GeneratorBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn version(&self) -> String {
        MOCK_VERSION.to_string()
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn concurrency_limit(&self) -> usize {
        usize::MAX
    }

    fn generate(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<RgbImage, GenerateError> {
        render(prompt, seed, size)
    }
}

/// Renders the mock image for `prompt` and wraps it with its fingerprint.
/// The returned `sample_id` is empty; callers attach their own.
pub fn mock_generate(prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage, GenerateError> {
    let backend = MockBackend;
    let pixels = backend.generate(prompt, seed, size)?;
    Ok(GeneratedImage { sample_id: String::new(), pixels, fingerprint: backend.fingerprint(prompt, seed, size) })
}

fn stream(prompt: &str, seed: u64, size: ImageSize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"genpriv-mock\0");
    h.update((prompt.len() as u64).to_le_bytes());
    h.update(prompt.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(size.width.to_le_bytes());
    h.update(size.height.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    rng.random()
}

fn lerp(a: u8, b: u8, num: u64, den: u64) -> u8 {
    ((a as u64 * (den - num) + b as u64 * num) / den) as u8
}

fn blend(dst: &mut Rgb<u8>, src: [u8; 3], alpha: u64) {
    for c in 0..3 {
        dst.0[c] = lerp(dst.0[c], src[c], alpha, 255);
    }
}

fn render(prompt: &str, seed: u64, size: ImageSize) -> Result<RgbImage, GenerateError> {
    if prompt.trim().is_empty() {
        return Err(GenerateError::EmptyPrompt(String::new()));
    }
    if size.width == 0 || size.height == 0 {
        return Err(GenerateError::InvalidSize(size.width, size.height));
    }
    let (w, h) = (size.width as u64, size.height as u64);
    let mut rng = stream(prompt, seed, size);
    let (top, bottom) = (color(&mut rng), color(&mut rng));
    // gradient direction: 0 vertical, 1 horizontal, 2 diagonal
    let direction = rng.random_range(0..3u8);
    let mut img = RgbImage::from_fn(size.width, size.height, |x, y| {
        let (x, y) = (x as u64, y as u64);
        let (num, den) = match direction {
            0 => (y, h.max(2) - 1),
            1 => (x, w.max(2) - 1),
            _ => (x + y, (w + h).max(3) - 2),
        };
        let num = num.min(den);
        Rgb([0, 1, 2].map(|c| lerp(top[c], bottom[c], num, den)))
    });

    let shapes = rng.random_range(3..=8u32);
    for _ in 0..shapes {
        let fill = color(&mut rng);
        let alpha = rng.random_range(96..=255u64);
        let cx = rng.random_range(0..w) as i64;
        let cy = rng.random_range(0..h) as i64;
        let extent = (w.min(h) / 3).max(1);
        let rx = rng.random_range(1..=extent) as i64;
        let ry = rng.random_range(1..=extent) as i64;
        let is_disc = rng.random_bool(0.5);
        let x0 = (cx - rx).max(0) as u32;
        let x1 = ((cx + rx).min(w as i64 - 1)) as u32;
        let y0 = (cy - ry).max(0) as u32;
        let y1 = ((cy + ry).min(h as i64 - 1)) as u32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let inside = if is_disc {
                    let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                    dx * dx + dy * dy <= rx * rx
                } else {
                    true
                };
                if inside {
                    blend(img.get_pixel_mut(x, y), fill, alpha);
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    fn digest(img: &RgbImage) -> String {
        hex::encode(Sha256::digest(img.as_raw()))
    }

    #[test]
    fn same_inputs_same_bytes() {
        let a = mock_generate("a red car", 1, ImageSize::square(64)).unwrap();
        let b = mock_generate("a red car", 1, ImageSize::square(64)).unwrap();
        assert_eq!(a.pixels.as_raw(), b.pixels.as_raw());
        assert_eq!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn seed_changes_pixels() {
        let a = mock_generate("a red car", 1, ImageSize::square(64)).unwrap();
        let b = mock_generate("a red car", 2, ImageSize::square(64)).unwrap();
        assert_ne!(a.pixels.as_raw(), b.pixels.as_raw());
        assert_ne!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(mock_generate("", 1, ImageSize::square(8)), Err(GenerateError::EmptyPrompt(_))));
        assert!(matches!(mock_generate("x", 1, ImageSize { width: 0, height: 4 }), Err(GenerateError::InvalidSize(0, 4))));
    }

    #[test]
    fn requested_size_is_honored() {
        let img = mock_generate("tall", 3, ImageSize { width: 7, height: 13 }).unwrap();
        assert_eq!(img.pixels.dimensions(), (7, 13));
        let one = mock_generate("dot", 3, ImageSize::square(1)).unwrap();
        assert_eq!(one.pixels.dimensions(), (1, 1));
    }

    // Frozen digests: any change to the renderer or RNG stream shows up here.
    #[test]
    fn golden_digests() {
        let a = mock_generate("a red car", 1, ImageSize::square(32)).unwrap();
        let b = mock_generate("a cat on a mat", 7, ImageSize { width: 24, height: 16 }).unwrap();
        assert_eq!(digest(&a.pixels), GOLDEN_RED_CAR);
        assert_eq!(digest(&b.pixels), GOLDEN_CAT);
    }

    const GOLDEN_RED_CAR: &str = "dc0a043472c430aa9151f4b1347da73356d90af6efa8f05e69fe0e271b97ab44";
    const GOLDEN_CAT: &str = "037111b08251fcefe0c12210e09e33ad1e8f6c5520a0245ff8393a6ca2652182";

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn fingerprint_equality_implies_pixel_equality(
            p1 in "[a-z ]{1,12}", p2 in "[a-z ]{1,12}", s1 in 0u64..4, s2 in 0u64..4,
        ) {
            prop_assume!(!p1.trim().is_empty() && !p2.trim().is_empty());
            let size = ImageSize::square(16);
            let a = mock_generate(&p1, s1, size).unwrap();
            let b = mock_generate(&p2, s2, size).unwrap();
            if a.fingerprint == b.fingerprint {
                prop_assert_eq!(a.pixels.as_raw(), b.pixels.as_raw());
            } else {
                prop_assert!((p1.as_str(), s1) != (p2.as_str(), s2));
            }
        }
    }
}
