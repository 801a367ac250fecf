use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::gaussian::GAUSSIAN_ATTRIBUTES;
use crate::nn::{avg_pool2, relu, upsample2, Conv2d};

use super::weights::WeightStore;

pub const STAGES: usize = 5;

/// One encoder-decoder branch. `down[i]` runs at resolution `H / 2^i`, the
/// mid block at `H / 32`; `up[i]` upsamples, concatenates skip `4 - i` and
/// convolves. `up[4]` produces the 14-channel map and has no ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub down: Vec<Conv2d>,
    pub mid: Conv2d,
    pub up: Vec<Conv2d>,
}

impl BranchWeights {
    /// `channels[i]` is the width of down block `i`.
    pub fn seeded(in_channels: usize, channels: [usize; STAGES], seed: u64) -> Self {
        let mut down = Vec::new();
        let mut prev = in_channels;
        for (i, &c) in channels.iter().enumerate() {
            down.push(Conv2d::seeded(c, prev, 3, seed + i as u64));
            prev = c;
        }
        let mid = Conv2d::seeded(prev, prev, 3, seed + 10);
        let mut up = Vec::new();
        for i in 0..STAGES {
            let skip = channels[STAGES - 1 - i];
            let out = if i + 1 == STAGES {
                GAUSSIAN_ATTRIBUTES
            } else {
                channels[STAGES - 2 - i]
            };
            up.push(Conv2d::seeded(out, prev + skip, 3, seed + 20 + i as u64));
            prev = out;
        }
        BranchWeights { down, mid, up }
    }

    pub fn zeroed(&self) -> Self {
        let z = |c: &Conv2d| Conv2d::zeros(c.out_channels, c.in_channels, c.kernel);
        BranchWeights {
            down: self.down.iter().map(z).collect(),
            mid: z(&self.mid),
            up: self.up.iter().map(z).collect(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.down[0].in_channels
    }

    fn validate(&self) -> Result<()> {
        if self.down.len() != STAGES || self.up.len() != STAGES {
            return Err(Error::shape(format!(
                "branch needs {STAGES} down and {STAGES} up blocks, has {} and {}",
                self.down.len(),
                self.up.len()
            )));
        }
        for i in 1..STAGES {
            if self.down[i].in_channels != self.down[i - 1].out_channels {
                return Err(Error::shape(format!("down{i} input width does not match down{}", i - 1)));
            }
        }
        let deepest = self.down[STAGES - 1].out_channels;
        if self.mid.in_channels != deepest || self.mid.out_channels != deepest {
            return Err(Error::shape("mid block must keep the deepest width"));
        }
        let mut prev = deepest;
        for (i, u) in self.up.iter().enumerate() {
            let skip = self.down[STAGES - 1 - i].out_channels;
            if u.in_channels != prev + skip {
                return Err(Error::shape(format!(
                    "up{} expects {} inputs, has {}",
                    i + 1,
                    prev + skip,
                    u.in_channels
                )));
            }
            prev = u.out_channels;
        }
        if prev != GAUSSIAN_ATTRIBUTES {
            return Err(Error::shape(format!("up{STAGES} must output {GAUSSIAN_ATTRIBUTES} channels")));
        }
        Ok(())
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        for (i, c) in self.down.iter().enumerate() {
            store.put_conv(&format!("{prefix}.down{}", i + 1), c)?;
        }
        store.put_conv(&format!("{prefix}.mid"), &self.mid)?;
        for (i, c) in self.up.iter().enumerate() {
            store.put_conv(&format!("{prefix}.up{}", i + 1), c)?;
        }
        Ok(())
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let down = (1..=STAGES)
            .map(|i| store.conv(&format!("{prefix}.down{i}")))
            .collect::<Result<_>>()?;
        let up = (1..=STAGES)
            .map(|i| store.conv(&format!("{prefix}.up{i}")))
            .collect::<Result<_>>()?;
        let b = BranchWeights {
            down,
            mid: store.conv(&format!("{prefix}.mid"))?,
            up,
        };
        b.validate()?;
        Ok(b)
    }

    /// Encoder pass: skips (pre-pool) and the mid-block output.
    pub fn encode(&self, input: &FeatureMap) -> Result<(Vec<FeatureMap>, FeatureMap)> {
        let mut skips = Vec::with_capacity(STAGES);
        let mut x = input.clone();
        for conv in &self.down {
            let y = relu(&conv.forward(&x)?);
            x = avg_pool2(&y)?;
            skips.push(y);
        }
        Ok((skips, relu(&self.mid.forward(&x)?)))
    }

    /// Up block `i` (0-based) on decoder input `x`.
    pub fn up_block(&self, i: usize, x: &FeatureMap, skips: &[FeatureMap]) -> Result<FeatureMap> {
        let up = upsample2(x);
        let cat = FeatureMap::concat(&[&up, &skips[STAGES - 1 - i]])?;
        let y = self.up[i].forward(&cat)?;
        Ok(if i + 1 == STAGES { y } else { relu(&y) })
    }
}

/// Texture (`R_c`) and normal (`R_n`) branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DualUNetWeights {
    pub texture: BranchWeights,
    pub normal: BranchWeights,
}

impl DualUNetWeights {
    pub const DEFAULT_CHANNELS: [usize; STAGES] = [32, 64, 64, 64, 64];

    pub fn seeded(in_channels: usize, channels: [usize; STAGES], seed: u64) -> Self {
        DualUNetWeights {
            texture: BranchWeights::seeded(in_channels, channels, seed),
            normal: BranchWeights::seeded(in_channels, channels, seed + 1000),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.texture.validate()?;
        self.normal.validate()?;
        if self.texture.in_channels() != self.normal.in_channels() {
            return Err(Error::shape("branches must share the input width"));
        }
        Ok(())
    }

    pub fn save(&self, store: &mut WeightStore, prefix: &str) -> Result<()> {
        self.texture.save(store, &format!("{prefix}.c"))?;
        self.normal.save(store, &format!("{prefix}.n"))
    }

    pub fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let w = DualUNetWeights {
            texture: BranchWeights::load(store, &format!("{prefix}.c"))?,
            normal: BranchWeights::load(store, &format!("{prefix}.n"))?,
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone)]
pub struct DualUNetOutput {
    pub texture: FeatureMap,
    pub normal: FeatureMap,
    /// Shape of each fused map: mid block, then up blocks 1-4.
    pub fusion_shapes: Vec<(usize, usize, usize)>,
}

fn fuse(a: &FeatureMap, b: &FeatureMap, stage: &str) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "fusion after {stage}: texture {:?} vs normal {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.add(b)
}

/// Runs both branches on the concatenation of geometry and texture features.
/// Mid-block outputs are summed and fed to both decoders, as are the outputs
/// of up blocks 1-4; up block 5 outputs stay separate.
pub fn dual_unet_forward(geo: &FeatureMap, tex: &FeatureMap, w: &DualUNetWeights) -> Result<DualUNetOutput> {
    w.validate()?;
    if geo.height() != tex.height() || geo.width() != tex.width() {
        return Err(Error::shape(format!(
            "geometry {}x{} and texture {}x{} features are not aligned",
            geo.height(),
            geo.width(),
            tex.height(),
            tex.width()
        )));
    }
    let factor = 1 << STAGES;
    if geo.height() % factor != 0 || geo.width() % factor != 0 {
        return Err(Error::shape(format!(
            "feature size {}x{} must be divisible by {factor}",
            geo.height(),
            geo.width()
        )));
    }
    let input = FeatureMap::concat(&[geo, tex])?;
    if input.channels() != w.texture.in_channels() {
        return Err(Error::shape(format!(
            "u-net expects {} input channels, got {} geometry + {} texture",
            w.texture.in_channels(),
            geo.channels(),
            tex.channels()
        )));
    }
    let (skips_c, mid_c) = w.texture.encode(&input)?;
    let (skips_n, mid_n) = w.normal.encode(&input)?;
    let mut fused = fuse(&mid_c, &mid_n, "mid block")?;
    let mut fusion_shapes = vec![fused.shape()];
    for i in 0..STAGES - 1 {
        let c = w.texture.up_block(i, &fused, &skips_c)?;
        let n = w.normal.up_block(i, &fused, &skips_n)?;
        fused = fuse(&c, &n, &format!("up block {}", i + 1))?;
        fusion_shapes.push(fused.shape());
    }
    Ok(DualUNetOutput {
        texture: w.texture.up_block(STAGES - 1, &fused, &skips_c)?,
        normal: w.normal.up_block(STAGES - 1, &fused, &skips_n)?,
        fusion_shapes,
    })
}
