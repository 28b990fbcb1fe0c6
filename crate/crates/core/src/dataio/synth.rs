//! Desk-scale synthetic slides.
//!
//! Each slide is a white, slightly noisy field holding one textured tissue
//! disc. A per-slide parameter θ ∈ [0, 1] drives the texture: nuclear
//! density, nuclear size and stain darkness all grow with θ. IDH-mutant
//! slides draw θ from `mutant_theta`, wildtype slides from `wildtype_theta`.
//!
//! Survival follows a Weibull proportional-hazards law with log-hazard
//! `η = beta·(θ − ½)`:
//!
//! ```text
//! T = scale_days · (E · exp(−η))^(1/shape),   E ~ Exp(1)
//! ```
//!
//! so the hazard ratio between two slides is `exp(beta·Δθ)`. With
//! probability `censor_prob` the record is censored at `U·T`, `U ~ U(0, 1)`.
//! Grade is II, III or IV by θ tercile; mutants with θ < `codel_below` are
//! 1p/19q-codeleted.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Codel, Grade, Idh, Sex, SlideRecord};
use super::raster::{encode_png, ImageRaster};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLaw {
    pub beta: f64,
    pub shape: f64,
    pub scale_days: f64,
}

impl Default for SurvivalLaw {
    fn default() -> Self {
        Self {
            beta: 8.0,
            shape: 1.5,
            scale_days: 900.0,
        }
    }
}

impl SurvivalLaw {
    pub fn log_hazard(&self, theta: f64) -> f64 {
        self.beta * (theta - 0.5)
    }

    /// One survival time in days.
    pub fn sample(&self, theta: f64, rng: &mut impl Rng) -> f64 {
        let e = -(1.0 - rng.random::<f64>()).ln();
        self.scale_days * (e * (-self.log_hazard(theta)).exp()).powf(1.0 / self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub slides_per_class: usize,
    pub image_size: usize,
    /// Disc radius as a fraction of the image side.
    pub disc_radius: f64,
    pub mutant_theta: (f64, f64),
    pub wildtype_theta: (f64, f64),
    pub codel_below: f64,
    pub censor_prob: f64,
    pub survival: SurvivalLaw,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            slides_per_class: 30,
            image_size: 256,
            disc_radius: 0.42,
            mutant_theta: (0.0, 0.4),
            wildtype_theta: (0.6, 1.0),
            codel_below: 0.2,
            censor_prob: 0.2,
            survival: SurvivalLaw::default(),
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if self.slides_per_class == 0 {
            return Err(Error::Config("slides_per_class must be at least 1".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        if !(self.disc_radius > 0.0 && self.disc_radius <= 0.5) {
            return Err(Error::Config("disc_radius must lie in (0, 0.5]".into()));
        }
        if !range_ok(self.mutant_theta) || !range_ok(self.wildtype_theta) {
            return Err(Error::Config("theta ranges must be ordered pairs inside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.censor_prob) {
            return Err(Error::Config("censor_prob must lie in [0, 1]".into()));
        }
        if !(self.survival.shape > 0.0 && self.survival.scale_days > 0.0 && self.survival.beta.is_finite()) {
            return Err(Error::Config("survival law needs positive shape and scale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Renders one slide: white background plus a disc of tissue textured by θ.
pub fn render_slide(theta: f64, size: usize, radius: f64, rng: &mut impl Rng) -> (ImageRaster, Disc) {
    let disc = Disc {
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        radius,
    };
    let mut img = ImageRaster::filled(size, size, [1.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let v = 0.95 + rng.random_range(-0.02..0.02);
            img.set(x, y, [v, v, v + 0.01]);
        }
    }

    // stroma: pink with a faint fibrous stripe
    let stain = rng.random_range(0.92..1.08);
    let phi = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (phi.cos(), phi.sin());
    let period = rng.random_range(10.0..16.0);
    let mut in_disc = Vec::new();
    for y in 0..size {
        for x in 0..size {
            if disc.contains(x, y) {
                let fiber = 0.04 * (std::f64::consts::TAU * (x as f64 * c + y as f64 * s) / period).sin();
                let jitter = rng.random_range(-0.03..0.03);
                img.set(
                    x,
                    y,
                    [
                        (0.92 + fiber + jitter) * stain,
                        (0.66 + fiber + jitter) * stain,
                        (0.80 + fiber + jitter) * stain,
                    ],
                );
                in_disc.push((x, y));
            }
        }
    }

    // nuclei: denser, larger and darker as θ grows
    let area = std::f64::consts::PI * radius * radius;
    let count = ((0.0025 + 0.0095 * theta) * area).round() as usize;
    let darkness = 1.0 - 0.35 * theta;
    for _ in 0..count {
        let (nx, ny) = in_disc[rng.random_range(0..in_disc.len())];
        let r = 1.8 + 2.2 * theta + rng.random_range(-0.4..0.4);
        let shade = darkness * rng.random_range(0.9..1.1);
        let base = [0.42 * shade, 0.22 * shade, 0.58 * shade];
        let reach = r.ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (px, py) = (nx as isize + dx, ny as isize + dy);
                if px < 0 || py < 0 || px >= size as isize || py >= size as isize {
                    continue;
                }
                let (px, py) = (px as usize, py as usize);
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                if d > r + 0.5 || !disc.contains(px, py) {
                    continue;
                }
                // soft rim: full colour inside r − 0.5, linear ramp to r + 0.5
                let a = (r + 0.5 - d).clamp(0.0, 1.0);
                let old = [img.get(0, px, py), img.get(1, px, py), img.get(2, px, py)];
                img.set(px, py, std::array::from_fn(|k| a * base[k] + (1.0 - a) * old[k]));
            }
        }
    }
    (img, disc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlide {
    pub record: SlideRecord,
    pub theta: f64,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Labels and survival for slide `index`, without rendering.
fn draw_slide(spec: &CorpusSpec, index: usize, rng: &mut ChaCha8Rng) -> SynthSlide {
    let mutant = index.is_multiple_of(2);
    let (lo, hi) = if mutant { spec.mutant_theta } else { spec.wildtype_theta };
    let theta = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let grade = if theta < 1.0 / 3.0 {
        Grade::II
    } else if theta < 2.0 / 3.0 {
        Grade::III
    } else {
        Grade::IV
    };
    let codel = mutant.then_some({
        if theta < spec.codel_below {
            Codel::Codeleted
        } else {
            Codel::NonCodeleted
        }
    });
    let t = spec.survival.sample(theta, rng);
    let (os, event) = if rng.random::<f64>() < spec.censor_prob {
        (t * rng.random::<f64>(), 0)
    } else {
        (t, 1)
    };
    let sex = if rng.random::<bool>() { Sex::M } else { Sex::F };
    let age = Normal::new(35.0 + 25.0 * theta, 6.0).expect("valid normal").sample(rng).max(18.0);
    let slide_id = format!("SYN-{index:04}");
    SynthSlide {
        record: SlideRecord {
            image_path: format!("images/{slide_id}.png"),
            slide_id,
            patient_id: format!("PT-{index:04}"),
            idh: Some(if mutant { Idh::Mutant } else { Idh::Wildtype }),
            codel,
            grade,
            os_days: Some(round1(os)),
            event: Some(event),
            sex: Some(sex),
            age_years: Some(round1(age)),
        },
        theta,
    }
}

/// Writes `images/*.png`, `manifest.csv` and `truth.csv` (`slide_id,theta`)
/// under `out_dir` and returns the slides in manifest order. Slides alternate
/// mutant, wildtype; slide `i` uses ChaCha stream `i` of `seed`.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64, out_dir: &Path) -> Result<Vec<SynthSlide>> {
    spec.validate()?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let radius = spec.disc_radius * spec.image_size as f64;
    let slides: Vec<SynthSlide> = (0..2 * spec.slides_per_class)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let slide = draw_slide(spec, i, &mut rng);
            let (img, _) = render_slide(slide.theta, spec.image_size, radius, &mut rng);
            encode_png(&out_dir.join(&slide.record.image_path), &img)?;
            Ok(slide)
        })
        .collect::<Result<_>>()?;

    let records: Vec<SlideRecord> = slides.iter().map(|s| s.record.clone()).collect();
    write_manifest(&manifest_path(out_dir), &records)?;
    let truth_path = out_dir.join("truth.csv");
    let mut truth = String::from("slide_id,theta\n");
    for s in &slides {
        truth.push_str(&format!("{},{}\n", s.record.slide_id, s.theta));
    }
    std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
    Ok(slides)
}

pub fn manifest_path(corpus_dir: &Path) -> PathBuf {
    corpus_dir.join("manifest.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{tissue_mask, VAR_THRESH, WHITE_THRESH};

    #[test]
    fn censoring_and_balance() {
        let spec = CorpusSpec {
            censor_prob: 0.0,
            ..CorpusSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slides: Vec<SynthSlide> = (0..60).map(|i| draw_slide(&spec, i, &mut rng)).collect();
        assert!(slides.iter().all(|s| s.record.event == Some(1)));
        let mutants = slides.iter().filter(|s| s.record.idh == Some(Idh::Mutant)).count();
        assert_eq!(mutants, 30);
        assert!(slides
            .iter()
            .all(|s| s.record.codel.is_none() == (s.record.idh == Some(Idh::Wildtype))));
    }

    #[test]
    fn hazard_ratio_matches_beta() {
        let law = SurvivalLaw::default();
        assert!((law.log_hazard(0.75) - law.log_hazard(0.25) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_disc_mask_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (img, disc) = render_slide(0.1, 256, 30.0, &mut rng);
        let mask = tissue_mask(&img, WHITE_THRESH, VAR_THRESH);
        let (mut disc_hit, mut disc_n, mut bg_hit, mut bg_n) = (0, 0, 0, 0);
        for y in 0..256 {
            for x in 0..256 {
                if disc.contains(x, y) {
                    disc_n += 1;
                    disc_hit += usize::from(mask.get(x, y));
                } else {
                    bg_n += 1;
                    bg_hit += usize::from(mask.get(x, y));
                }
            }
        }
        assert!(disc_hit as f64 >= 0.95 * disc_n as f64);
        assert!(bg_hit as f64 <= 0.05 * bg_n as f64);
    }
}
