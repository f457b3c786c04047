//! Deterministic GPU-free backends.
//!
//! Each stub's output is a pure function of its descriptor, its input and the
//! seed. Stubs that carry a lookup table fold a digest of that table into
//! their descriptor so that a different table is a different identity. Every
//! stub counts its invocations so tests can observe cache behavior.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    Captioner, CaptionerHandle, ChunkTokenizer, Encoder, EncoderHandle, Generator, GeneratorHandle, Tokenizer,
};
use crate::error::{Error, Result};
use crate::model::{BackendDescriptor, BackendKind, ContentHash, Image};

pub const STUB_VERSION: &str = "1";

#[derive(Debug, Default)]
struct CallCounter(AtomicUsize);

impl CallCounter {
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }

    fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }
}

fn table_digest(rows: impl Iterator<Item = (String, Vec<u8>)>) -> String {
    let mut rows: Vec<(String, Vec<u8>)> = rows.collect();
    rows.sort();
    let mut hasher = Sha256::new();
    for (key, value) in rows {
        hasher.update((key.len() as u64).to_le_bytes());
        hasher.update(key.as_bytes());
        hasher.update((value.len() as u64).to_le_bytes());
        hasher.update(&value);
    }
    hex::encode(hasher.finalize())
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- captioners

/// Returns a fixed caption per image content hash.
#[derive(Debug)]
pub struct LookupCaptioner {
    table: HashMap<ContentHash, String>,
    tokenizer: ChunkTokenizer,
    calls: CallCounter,
}

impl LookupCaptioner {
    pub const NAME: &'static str = "lookup-stub";

    pub fn new(entries: impl IntoIterator<Item = (ContentHash, String)>) -> Self {
        LookupCaptioner { table: entries.into_iter().collect(), tokenizer: ChunkTokenizer::default(), calls: CallCounter::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        let digest = table_digest(self.table.iter().map(|(k, v)| (k.to_hex(), v.clone().into_bytes())));
        BackendDescriptor::new(BackendKind::Captioner, Self::NAME, STUB_VERSION)
            .with_param("table_digest", digest)
            .with_param("tokenizer", "chunk4")
    }

    pub fn into_handle(self: Arc<Self>) -> Result<CaptionerHandle> {
        CaptionerHandle::new(self.descriptor(), self)
    }
}

impl Captioner for LookupCaptioner {
    fn raw_caption(&self, image: &Image, _prompt: &str) -> Result<String> {
        self.calls.bump();
        self.table.get(&image.content_hash()).cloned().ok_or_else(|| {
            Error::BackendFault(format!("lookup-stub has no caption for image {}", image.content_hash()))
        })
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }
}

/// Describes the dominant colors of the left and right halves of an image.
#[derive(Debug, Default)]
pub struct PaletteCaptioner {
    tokenizer: ChunkTokenizer,
    calls: CallCounter,
}

const PALETTE: &[(&str, [f64; 3])] = &[
    ("black", [0.0, 0.0, 0.0]),
    ("white", [255.0, 255.0, 255.0]),
    ("gray", [128.0, 128.0, 128.0]),
    ("red", [220.0, 30.0, 30.0]),
    ("green", [40.0, 170.0, 60.0]),
    ("blue", [40.0, 70.0, 210.0]),
    ("yellow", [235.0, 220.0, 50.0]),
    ("orange", [240.0, 140.0, 30.0]),
    ("purple", [130.0, 50.0, 160.0]),
    ("brown", [120.0, 75.0, 40.0]),
    ("cyan", [40.0, 210.0, 220.0]),
    ("pink", [240.0, 150.0, 190.0]),
];

fn mean_color(pixels: &RgbImage, x0: u32, x1: u32) -> [f64; 3] {
    let mut sum = [0.0f64; 3];
    let mut n = 0.0;
    for y in 0..pixels.height() {
        for x in x0..x1 {
            let p = pixels.get_pixel(x, y).0;
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
            n += 1.0;
        }
    }
    if n == 0.0 {
        return sum;
    }
    sum.map(|s| s / n)
}

fn color_name(rgb: [f64; 3]) -> &'static str {
    let dist = |p: &[f64; 3]| (0..3).map(|c| (p[c] - rgb[c]).powi(2)).sum::<f64>();
    PALETTE
        .iter()
        .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
        .map(|(name, _)| *name)
        .expect("palette is non-empty")
}

impl PaletteCaptioner {
    pub const NAME: &'static str = "palette-stub";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Captioner, Self::NAME, STUB_VERSION).with_param("tokenizer", "chunk4")
    }

    pub fn into_handle(self: Arc<Self>) -> Result<CaptionerHandle> {
        CaptionerHandle::new(self.descriptor(), self)
    }
}

impl Captioner for PaletteCaptioner {
    fn raw_caption(&self, image: &Image, _prompt: &str) -> Result<String> {
        self.calls.bump();
        let px = image.pixels();
        let mid = (px.width() / 2).max(1).min(px.width());
        let left = mean_color(px, 0, mid);
        let right = if mid < px.width() { mean_color(px, mid, px.width()) } else { left };
        let luma = (left.iter().sum::<f64>() + right.iter().sum::<f64>()) / 6.0;
        let tone = match luma {
            l if l < 70.0 => "dark",
            l if l < 170.0 => "muted",
            _ => "bright",
        };
        let (l, r) = (color_name(left), color_name(right));
        Ok(if l == r {
            format!("<s> a {tone} picture filled with {l} tones </s>")
        } else {
            format!("<s> a {tone} picture with {l} on the left and {r} on the right </s>")
        })
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }
}

/// Emits the same caption for every image.
#[derive(Debug)]
pub struct ConstantCaptioner {
    text: String,
    tokenizer: ChunkTokenizer,
    calls: CallCounter,
}

impl ConstantCaptioner {
    pub const NAME: &'static str = "constant-stub";

    pub fn new(text: impl Into<String>) -> Self {
        ConstantCaptioner { text: text.into(), tokenizer: ChunkTokenizer::default(), calls: CallCounter::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Captioner, Self::NAME, STUB_VERSION)
            .with_param("text", self.text.clone())
            .with_param("tokenizer", "chunk4")
    }

    pub fn into_handle(self: Arc<Self>) -> Result<CaptionerHandle> {
        CaptionerHandle::new(self.descriptor(), self)
    }
}

impl Captioner for ConstantCaptioner {
    fn raw_caption(&self, _image: &Image, _prompt: &str) -> Result<String> {
        self.calls.bump();
        Ok(self.text.clone())
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }
}

// ---------------------------------------------------------------- generators

/// Uniform random pixels keyed by `hash(text, seed)`.
#[derive(Debug)]
pub struct NoiseGenerator {
    width: u32,
    height: u32,
    calls: CallCounter,
}

impl NoiseGenerator {
    pub const NAME: &'static str = "noise-stub";

    pub fn new(width: u32, height: u32) -> Self {
        NoiseGenerator { width: width.max(1), height: height.max(1), calls: CallCounter::default() }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Generator, Self::NAME, STUB_VERSION)
            .with_param("width", self.width)
            .with_param("height", self.height)
    }

    pub fn into_handle(self: Arc<Self>) -> Result<GeneratorHandle> {
        GeneratorHandle::new(self.descriptor(), self)
    }

    fn render(&self, text: &str, seed: u64) -> RgbImage {
        let mut hasher = Sha256::new();
        hasher.update(b"noise-stub\0");
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(seed.to_le_bytes());
        hasher.update(normalize_text(text).as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let mut buf = vec![0u8; (self.width * self.height * 3) as usize];
        rng.fill_bytes(&mut buf);
        RgbImage::from_raw(self.width, self.height, buf).expect("buffer sized to image")
    }
}

impl Generator for NoiseGenerator {
    fn generate(&self, text: &str, seed: u64) -> Result<RgbImage> {
        self.calls.bump();
        Ok(self.render(text, seed))
    }
}

/// Simulates a perfect text-to-image model: returns the original image for
/// captions in its table and falls back to noise for anything else.
#[derive(Debug)]
pub struct OracleGenerator {
    table: HashMap<String, RgbImage>,
    fallback: NoiseGenerator,
    calls: CallCounter,
}

impl OracleGenerator {
    pub const NAME: &'static str = "oracle-stub";

    pub fn new(entries: impl IntoIterator<Item = (String, RgbImage)>, fallback_width: u32, fallback_height: u32) -> Self {
        OracleGenerator {
            table: entries.into_iter().map(|(text, img)| (normalize_text(&text), img)).collect(),
            fallback: NoiseGenerator::new(fallback_width, fallback_height),
            calls: CallCounter::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        let digest =
            table_digest(self.table.iter().map(|(text, img)| (text.clone(), ContentHash::of_pixels(img).0.to_vec())));
        BackendDescriptor::new(BackendKind::Generator, Self::NAME, STUB_VERSION)
            .with_param("table_digest", digest)
            .with_param("width", self.fallback.width)
            .with_param("height", self.fallback.height)
    }

    pub fn into_handle(self: Arc<Self>) -> Result<GeneratorHandle> {
        GeneratorHandle::new(self.descriptor(), self)
    }
}

impl Generator for OracleGenerator {
    fn generate(&self, text: &str, seed: u64) -> Result<RgbImage> {
        self.calls.bump();
        match self.table.get(&normalize_text(text)) {
            Some(img) => Ok(img.clone()),
            None => Ok(self.fallback.render(text, seed)),
        }
    }
}

// ---------------------------------------------------------------- encoders

/// Box-filter average of `pixels` onto a `grid` x `grid` raster.
pub fn downsample(pixels: &RgbImage, grid: u32) -> Vec<[f64; 3]> {
    let (w, h) = (pixels.width() as u64, pixels.height() as u64);
    let g = grid as u64;
    let span = |cell: u64, size: u64| {
        let lo = cell * size / g;
        let hi = ((cell + 1) * size / g).max(lo + 1).min(size);
        (lo as u32, hi as u32)
    };
    let mut out = Vec::with_capacity((g * g) as usize);
    for cy in 0..g {
        let (y0, y1) = span(cy, h);
        for cx in 0..g {
            let (x0, x1) = span(cx, w);
            let mut sum = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let Rgb(p) = *pixels.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as f64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(sum.map(|s| s / n));
        }
    }
    out
}

fn mean_center(mut values: Vec<f64>) -> Vec<f64> {
    // A constant input centers to exactly zero, not to rounding residue.
    if values.iter().all(|&v| v == values[0]) {
        return vec![0.0; values.len()];
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v -= mean;
    }
    values
}

/// Downsamples to 16x16 RGB, flattens to 768 values in [0, 1] and mean-centers.
#[derive(Debug)]
pub struct PixelEncoder {
    grid: u32,
    calls: CallCounter,
}

impl Default for PixelEncoder {
    fn default() -> Self {
        PixelEncoder { grid: 16, calls: CallCounter::default() }
    }
}

impl PixelEncoder {
    pub const NAME: &'static str = "pixel-stub";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn dim(&self) -> usize {
        (self.grid * self.grid * 3) as usize
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Encoder, Self::NAME, STUB_VERSION)
            .with_param("grid", self.grid)
            .with_param("dim", self.dim() as i64)
    }

    pub fn into_handle(self: Arc<Self>) -> Result<EncoderHandle> {
        EncoderHandle::new(self.descriptor(), self)
    }
}

impl Encoder for PixelEncoder {
    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        self.calls.bump();
        let cells = downsample(image.pixels(), self.grid);
        Ok(mean_center(cells.iter().flat_map(|c| c.map(|v| v / 255.0)).collect()))
    }
}

/// Joint RGB color histogram (`bins` per channel), normalized and mean-centered.
#[derive(Debug)]
pub struct HistogramEncoder {
    bins: u32,
    calls: CallCounter,
}

impl Default for HistogramEncoder {
    fn default() -> Self {
        HistogramEncoder { bins: 8, calls: CallCounter::default() }
    }
}

impl HistogramEncoder {
    pub const NAME: &'static str = "histogram-stub";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn dim(&self) -> usize {
        (self.bins * self.bins * self.bins) as usize
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Encoder, Self::NAME, STUB_VERSION)
            .with_param("bins", self.bins)
            .with_param("dim", self.dim() as i64)
    }

    pub fn into_handle(self: Arc<Self>) -> Result<EncoderHandle> {
        EncoderHandle::new(self.descriptor(), self)
    }
}

impl Encoder for HistogramEncoder {
    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        self.calls.bump();
        let b = self.bins as usize;
        let mut hist = vec![0.0f64; self.dim()];
        let bin = |v: u8| (v as usize * b) / 256;
        for Rgb(p) in image.pixels().pixels() {
            hist[(bin(p[0]) * b + bin(p[1])) * b + bin(p[2])] += 1.0;
        }
        let total = (image.pixels().width() * image.pixels().height()) as f64;
        Ok(mean_center(hist.into_iter().map(|c| c / total).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::cosine_similarity;
    use crate::model::{Caption, CaptionSource};

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 255 / w) as u8, (y * 255 / h) as u8, ((x ^ y) & 0xff) as u8]))
    }

    fn image(px: RgbImage) -> Image {
        Image::from_rgb(px, "mem").unwrap()
    }

    #[test]
    fn lookup_captioner_returns_table_entry() {
        let img = image(gradient(20, 10));
        let stub = Arc::new(LookupCaptioner::new([(img.content_hash(), "a red bicycle".to_string())]));
        let handle = stub.clone().into_handle().unwrap();
        let cap = handle.caption(&img, super::super::DEFAULT_PROMPT_TEMPLATE).unwrap();
        assert_eq!(cap.text, "a red bicycle");
        assert_eq!(cap.source, CaptionSource::ModelGenerated);
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn lookup_captioner_unknown_image_faults() {
        let stub = Arc::new(LookupCaptioner::new([]));
        let handle = stub.into_handle().unwrap();
        let err = handle.caption(&image(gradient(4, 4)), super::super::DEFAULT_PROMPT_TEMPLATE).unwrap_err();
        assert!(matches!(err, Error::BackendFault(_)));
    }

    #[test]
    fn captions_are_truncated_to_token_limit() {
        let long = vec!["abcdefghi"; 40].join(" ");
        let handle = Arc::new(ConstantCaptioner::new(long)).into_handle().unwrap();
        let cap = handle.caption(&image(gradient(4, 4)), super::super::DEFAULT_PROMPT_TEMPLATE).unwrap();
        let independent: usize = cap.text.split_whitespace().map(|w| w.chars().count().div_ceil(4)).sum();
        assert_eq!(independent, 99);
        assert!(independent <= cap.token_limit as usize);
    }

    #[test]
    fn empty_caption_is_a_backend_fault() {
        let handle = Arc::new(ConstantCaptioner::new("<s></s>")).into_handle().unwrap();
        let err = handle.caption(&image(gradient(4, 4)), super::super::DEFAULT_PROMPT_TEMPLATE).unwrap_err();
        assert!(matches!(err, Error::BackendFault(_)));
    }

    #[test]
    fn palette_captioner_strips_special_tokens() {
        let red = image(RgbImage::from_pixel(8, 8, Rgb([230, 20, 20])));
        let handle = Arc::new(PaletteCaptioner::new()).into_handle().unwrap();
        let cap = handle.caption(&red, super::super::DEFAULT_PROMPT_TEMPLATE).unwrap();
        assert_eq!(cap.text, "a muted picture filled with red tones");
    }

    #[test]
    fn noise_is_deterministic_and_seed_sensitive() {
        let gen = NoiseGenerator::new(16, 16);
        let a = gen.generate("a dog", 3).unwrap();
        let b = gen.generate("a dog", 3).unwrap();
        assert_eq!(ContentHash::of_pixels(&a), ContentHash::of_pixels(&b));
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000u64 {
            assert!(seen.insert(ContentHash::of_pixels(&gen.generate("a dog", seed).unwrap())));
        }
        assert_eq!(gen.calls(), 1002);
    }

    #[test]
    fn oracle_returns_original_for_known_caption() {
        let original = gradient(32, 24);
        let gen = Arc::new(OracleGenerator::new([("a  gradient".to_string(), original.clone())], 32, 24));
        let handle = gen.clone().into_handle().unwrap();
        let cap = Caption::new("a gradient", CaptionSource::HumanReference).unwrap();
        let out = handle.generate(&cap, 0).unwrap();
        assert_eq!(ContentHash::of_pixels(&out), ContentHash::of_pixels(&original));
        let other = Caption::new("a cat", CaptionSource::Foil).unwrap();
        assert_ne!(ContentHash::of_pixels(&handle.generate(&other, 0).unwrap()), ContentHash::of_pixels(&original));
    }

    #[test]
    fn oracle_descriptor_tracks_table() {
        let a = OracleGenerator::new([("x".to_string(), gradient(4, 4))], 8, 8);
        let b = OracleGenerator::new([("y".to_string(), gradient(4, 4))], 8, 8);
        assert_ne!(a.descriptor(), b.descriptor());
    }

    #[test]
    fn pixel_encoder_shape_and_identity() {
        let enc = Arc::new(PixelEncoder::new()).into_handle().unwrap();
        let img = image(gradient(50, 37));
        let v = enc.embed(&img).unwrap();
        assert_eq!(v.dim, 768);
        assert_eq!(cosine_similarity(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn pixel_encoder_ignores_file_format() {
        let img = image(gradient(33, 21));
        let png = img.encode_png().unwrap();
        let mut bmp = std::io::Cursor::new(Vec::new());
        img.pixels().write_to(&mut bmp, image::ImageFormat::Bmp).unwrap();
        let enc = Arc::new(PixelEncoder::new()).into_handle().unwrap();
        let a = enc.embed(&Image::decode(&png, "a.png").unwrap()).unwrap();
        let b = enc.embed(&Image::decode(&bmp.into_inner(), "a.bmp").unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_encoder_rejects_flat_images() {
        let enc = Arc::new(PixelEncoder::new()).into_handle().unwrap();
        let flat = image(RgbImage::from_pixel(20, 20, Rgb([7, 7, 7])));
        assert!(matches!(enc.embed(&flat), Err(Error::BackendFault(_))));
    }

    #[test]
    fn downsample_handles_small_and_uneven_images() {
        let tiny = RgbImage::from_fn(3, 2, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 0]));
        let cells = downsample(&tiny, 16);
        assert_eq!(cells.len(), 256);
        assert_eq!(cells[0], [0.0, 0.0, 0.0]);
        assert_eq!(cells[255], [20.0, 10.0, 0.0]);
        let even = RgbImage::from_fn(32, 32, |x, _| Rgb([if x % 2 == 0 { 0 } else { 100 }, 0, 0]));
        assert!(downsample(&even, 16).iter().all(|c| c[0] == 50.0));
    }

    #[test]
    fn histogram_encoder_dim() {
        let enc = Arc::new(HistogramEncoder::new()).into_handle().unwrap();
        let v = enc.embed(&image(gradient(16, 16))).unwrap();
        assert_eq!(v.dim, 512);
    }
}
