use crate::error::{Error, Result};
use crate::tensor::conv_output_size;

/// Architecture and loss hyperparameters of a [`CapsNet`](super::CapsNet).
#[derive(Clone, Debug, PartialEq)]
pub struct CapsNetConfig {
    /// Side length of the square single-channel input image.
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub primary_maps: usize,
    pub primary_dim: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub num_classes: usize,
    pub digit_dim: usize,
    /// Hidden widths of the reconstruction decoder.
    pub decoder_hidden: Vec<usize>,
    pub routing_iterations: usize,
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
    /// Weight of the reconstruction MSE in the overall loss.
    pub mu: f64,
}

impl Default for CapsNetConfig {
    fn default() -> Self {
        Self {
            image_size: 28,
            conv1_channels: 256,
            conv1_kernel: 9,
            primary_maps: 32,
            primary_dim: 8,
            primary_kernel: 9,
            primary_stride: 2,
            num_classes: 10,
            digit_dim: 16,
            decoder_hidden: vec![512, 1024],
            routing_iterations: 3,
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
            mu: 4.0,
        }
    }
}

impl CapsNetConfig {
    /// A miniature network (8×8 input, 8 primary capsules, 2 classes) with
    /// the same layer structure, small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            conv1_channels: 3,
            conv1_kernel: 3,
            primary_maps: 2,
            primary_dim: 4,
            primary_kernel: 3,
            primary_stride: 2,
            num_classes: 2,
            digit_dim: 4,
            decoder_hidden: vec![6, 10],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("conv1_channels", self.conv1_channels),
            ("conv1_kernel", self.conv1_kernel),
            ("primary_maps", self.primary_maps),
            ("primary_dim", self.primary_dim),
            ("primary_kernel", self.primary_kernel),
            ("primary_stride", self.primary_stride),
            ("num_classes", self.num_classes),
            ("digit_dim", self.digit_dim),
            ("routing_iterations", self.routing_iterations),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.decoder_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if self.primary_grid() == 0 {
            return Err(Error::Config(format!(
                "kernels do not fit a {0}×{0} image",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn conv1_output(&self) -> usize {
        conv_output_size(self.image_size, self.conv1_kernel, 1).unwrap_or(0)
    }

    /// Side length of each primary capsule map.
    pub fn primary_grid(&self) -> usize {
        conv_output_size(self.conv1_output(), self.primary_kernel, self.primary_stride).unwrap_or(0)
    }

    pub fn primary_channels(&self) -> usize {
        self.primary_maps * self.primary_dim
    }

    pub fn num_primary_capsules(&self) -> usize {
        self.primary_maps * self.primary_grid() * self.primary_grid()
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    /// Width of the decoder input (all digit capsules, masked).
    pub fn decoder_input(&self) -> usize {
        self.num_classes * self.digit_dim
    }

    /// Header entries describing this configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden = self
            .decoder_hidden
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("image_size".into(), self.image_size.to_string()),
            ("conv1_channels".into(), self.conv1_channels.to_string()),
            ("conv1_kernel".into(), self.conv1_kernel.to_string()),
            ("primary_maps".into(), self.primary_maps.to_string()),
            ("primary_dim".into(), self.primary_dim.to_string()),
            ("primary_kernel".into(), self.primary_kernel.to_string()),
            ("primary_stride".into(), self.primary_stride.to_string()),
            ("num_classes".into(), self.num_classes.to_string()),
            ("digit_dim".into(), self.digit_dim.to_string()),
            ("decoder_hidden".into(), hidden),
            ("routing_iterations".into(), self.routing_iterations.to_string()),
            ("m_plus".into(), format!("{:?}", self.m_plus)),
            ("m_minus".into(), format!("{:?}", self.m_minus)),
            ("lambda".into(), format!("{:?}", self.lambda)),
            ("mu".into(), format!("{:?}", self.mu)),
        ]
    }

    /// Inverse of [`CapsNetConfig::to_pairs`]; `get` looks up a header key.
    pub fn from_lookup<'a>(get: impl Fn(&str) -> Option<&'a str>) -> Result<Self> {
        fn parse<V: std::str::FromStr>(key: &str, raw: Option<&str>) -> Result<V> {
            let raw = raw.ok_or_else(|| Error::Config(format!("missing header key {key}")))?;
            raw.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")))
        }
        let hidden_raw = get("decoder_hidden")
            .ok_or_else(|| Error::Config("missing header key decoder_hidden".into()))?;
        let decoder_hidden = hidden_raw
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse("decoder_hidden", Some(s)))
            .collect::<Result<Vec<usize>>>()?;
        let config = Self {
            image_size: parse("image_size", get("image_size"))?,
            conv1_channels: parse("conv1_channels", get("conv1_channels"))?,
            conv1_kernel: parse("conv1_kernel", get("conv1_kernel"))?,
            primary_maps: parse("primary_maps", get("primary_maps"))?,
            primary_dim: parse("primary_dim", get("primary_dim"))?,
            primary_kernel: parse("primary_kernel", get("primary_kernel"))?,
            primary_stride: parse("primary_stride", get("primary_stride"))?,
            num_classes: parse("num_classes", get("num_classes"))?,
            digit_dim: parse("digit_dim", get("digit_dim"))?,
            decoder_hidden,
            routing_iterations: parse("routing_iterations", get("routing_iterations"))?,
            m_plus: parse("m_plus", get("m_plus"))?,
            m_minus: parse("m_minus", get("m_minus"))?,
            lambda: parse("lambda", get("lambda"))?,
            mu: parse("mu", get("mu"))?,
        };
        config.validate()?;
        Ok(config)
    }
}
