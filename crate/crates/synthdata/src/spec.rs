use crate::error::{Result, SynthError};
use crate::render::GLYPH_COMBINATIONS;

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// Training samples per class.
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    /// Side length of the square images; a multiple of 8, at least 16.
    pub image_size: usize,
    /// Probability that a training background is the texture tied to the label.
    pub bias_strength: f64,
    pub num_identities: usize,
    pub views_per_identity: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            samples_per_class: 100,
            test_samples_per_class: 50,
            image_size: 32,
            bias_strength: 0.0,
            num_identities: 40,
            views_per_identity: 6,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return Err(SynthError::Spec(format!(
                "bias strength must lie in [0, 1], got {}",
                self.bias_strength
            )));
        }
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return Err(SynthError::Spec(format!(
                "image size must be a multiple of 8 and at least 16, got {}",
                self.image_size
            )));
        }
        if self.num_classes < 2 || self.num_classes > GLYPH_COMBINATIONS {
            return Err(SynthError::Spec(format!(
                "class count must lie in 2..={GLYPH_COMBINATIONS}, got {}",
                self.num_classes
            )));
        }
        if self.samples_per_class == 0 || self.test_samples_per_class == 0 {
            return Err(SynthError::Spec(
                "samples per class must be positive for both splits".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_retrieval(&self) -> Result<()> {
        self.validate()?;
        if self.num_identities < 4 || self.num_identities > GLYPH_COMBINATIONS {
            return Err(SynthError::Spec(format!(
                "retrieval needs 4..={GLYPH_COMBINATIONS} identities, got {}",
                self.num_identities
            )));
        }
        if self.views_per_identity < 2 {
            return Err(SynthError::Spec(format!(
                "retrieval needs at least 2 views per identity, got {}",
                self.views_per_identity
            )));
        }
        Ok(())
    }

    /// Rejects image sizes a backbone of `depth` stride-2 blocks cannot divide.
    pub fn check_depth(&self, depth: usize) -> Result<()> {
        let divisor = 1usize << depth;
        if self.image_size % divisor != 0 {
            return Err(SynthError::Spec(format!(
                "image size {} is not divisible by 2^{depth} = {divisor}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Number of identities used for training; the rest form query and gallery.
    pub fn train_identities(&self) -> usize {
        self.num_identities / 2
    }

    /// `key=value` lines describing every field, in a fixed order.
    pub fn to_manifest_lines(&self) -> Vec<String> {
        vec![
            format!("num_classes={}", self.num_classes),
            format!("samples_per_class={}", self.samples_per_class),
            format!("test_samples_per_class={}", self.test_samples_per_class),
            format!("image_size={}", self.image_size),
            format!("bias_strength={}", self.bias_strength),
            format!("num_identities={}", self.num_identities),
            format!("views_per_identity={}", self.views_per_identity),
            format!("seed={}", self.seed),
        ]
    }

    /// Sets one field from its manifest key. Returns `false` for unknown keys.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| SynthError::Spec(format!("cannot parse {key}={value}")))
        }
        match key {
            "num_classes" => self.num_classes = parse(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "test_samples_per_class" => self.test_samples_per_class = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "bias_strength" => self.bias_strength = parse(key, value)?,
            "num_identities" => self.num_identities = parse(key, value)?,
            "views_per_identity" => self.views_per_identity = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
