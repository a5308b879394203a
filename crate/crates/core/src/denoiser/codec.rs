use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image, LatentGrid};

/// Stand-in for the encoder/decoder pair: identity, or `k×k` average
/// pooling with nearest-neighbour upsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentCodec {
    #[default]
    Identity,
    Pool(usize),
}

impl LatentCodec {
    fn factor(&self) -> usize {
        match self {
            LatentCodec::Identity => 1,
            LatentCodec::Pool(k) => *k,
        }
    }

    fn check(&self, height: usize, width: usize) -> Result<usize> {
        let k = self.factor();
        if k == 0 {
            return Err(Error::Parameter("pool factor must be positive".into()));
        }
        if !height.is_multiple_of(k) || !width.is_multiple_of(k) {
            return Err(Error::Shape(format!(
                "{height}x{width} is not divisible by pool factor {k}"
            )));
        }
        Ok(k)
    }

    /// Latent spatial size for an image of the given size.
    pub fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let k = self.check(height, width)?;
        Ok((height / k, width / k))
    }

    pub fn encode(&self, image: &Image) -> Result<LatentGrid> {
        let k = self.check(image.height(), image.width())?;
        if k == 1 {
            return Ok(image.clone());
        }
        let inv = 1.0 / (k * k) as f64;
        Ok(LatentGrid::from_fn(
            image.channels(),
            image.height() / k,
            image.width() / k,
            |c, y, x| {
                let mut s = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        s += image.get(c, y * k + dy, x * k + dx);
                    }
                }
                s * inv
            },
        ))
    }

    pub fn decode(&self, latent: &LatentGrid) -> Result<Image> {
        let k = self.factor();
        if k == 0 {
            return Err(Error::Parameter("pool factor must be positive".into()));
        }
        if k == 1 {
            return Ok(latent.clone());
        }
        Ok(Image::from_fn(
            latent.channels(),
            latent.height() * k,
            latent.width() * k,
            |c, y, x| latent.get(c, y / k, x / k),
        ))
    }

    /// Mask at latent resolution; a latent cell is on if any pixel it covers is.
    pub fn encode_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        let k = self.check(mask.height(), mask.width())?;
        if k == 1 {
            return Ok(mask.clone());
        }
        Ok(BinaryMask::from_fn(mask.height() / k, mask.width() / k, |x, y| {
            (0..k).any(|dy| (0..k).any(|dx| mask.get(x * k + dx, y * k + dy)))
        }))
    }
}

impl std::fmt::Display for LatentCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatentCodec::Identity => f.write_str("identity"),
            LatentCodec::Pool(k) => write!(f, "pool-{k}"),
        }
    }
}

impl std::str::FromStr for LatentCodec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            return Ok(LatentCodec::Identity);
        }
        s.strip_prefix("pool-")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .map(LatentCodec::Pool)
            .ok_or_else(|| Error::Config(format!("unknown codec '{s}' (identity | pool-<k>)")))
    }
}
