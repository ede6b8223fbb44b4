//! The three networks: a small U-Net generator, a convolutional
//! discriminator and the inverse-mapping agent.
//!
//! All of them are pure functions of `(ParamSet, input)`. Layer table for
//! `C` image channels, base width `w`, depth 2, mapper width `m` and mapper
//! depth 1, kernel 3 (weights + biases):
//!
//! | network       | layer       | in → out          | params              |
//! |---------------|-------------|-------------------|---------------------|
//! | generator     | enc0        | C → w             | 9·C·w + w           |
//! |               | enc1        | w → 2w            | 9·w·2w + 2w         |
//! |               | bottleneck  | 2w → 2w           | 9·2w·2w + 2w        |
//! |               | dec1        | 2w+2w (skip) → w  | 9·4w·w + w          |
//! |               | dec0        | w+w (skip) → w    | 9·2w·w + w          |
//! |               | out         | w → C             | 9·w·C + C           |
//! | mapper        | enc0        | C → m             | 9·C·m + m           |
//! |               | bottleneck  | m → m             | 9·m·m + m           |
//! |               | dec0        | m → m (no skip)   | 9·m·m + m           |
//! |               | out         | m → C             | 9·m·C + C           |
//! | discriminator | conv0       | C → w             | 9·C·w + w           |
//! |               | conv1       | w → 2w            | 9·w·2w + 2w         |
//! |               | fc          | 2w·(S/4)² → 1     | 2w·(S/4)² + 1       |
//!
//! With C = 1, w = 8, m = 16, S = 16 that is 7113 generator, 4945 mapper and
//! 1505 discriminator parameters. The mapper has no skip connections, so it
//! has to encode the whole image; it gets its own width and depth because at
//! the generator's 4×4 bottleneck it cannot reproduce fine detail within its
//! training budget.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
    Mapper,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Generator => 1,
            Role::Discriminator => 2,
            Role::Mapper => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchSpec {
    pub channels: usize,
    pub width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub slope: f64,
    /// Square training resolution; fixes the discriminator's dense layer.
    pub image_size: usize,
    pub mapper_width: usize,
    pub mapper_depth: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            channels: 1,
            width: 8,
            depth: 2,
            kernel: 3,
            slope: 0.2,
            image_size: 16,
            mapper_width: 16,
            mapper_depth: 1,
        }
    }
}

impl ArchSpec {
    pub fn with_channels(channels: usize) -> Self {
        ArchSpec {
            channels,
            ..ArchSpec::default()
        }
    }

    /// The mapper's own encoder-decoder, expressed as a spec.
    fn mapper_view(&self) -> ArchSpec {
        ArchSpec {
            width: self.mapper_width,
            depth: self.mapper_depth,
            ..*self
        }
    }

    fn enc_channels(&self, level: usize) -> usize {
        self.width << level
    }

    fn dec_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.width
        } else {
            self.width << (level - 1)
        }
    }

    fn bottleneck_channels(&self) -> usize {
        self.enc_channels(self.depth - 1)
    }

    /// `(name, in_channels, out_channels)` for each conv layer, plus the
    /// dense layer's fan-in for the discriminator.
    fn layers(&self, role: Role) -> Vec<(String, usize, usize)> {
        match role {
            Role::Mapper => self.mapper_view().stack(role),
            _ => self.stack(role),
        }
    }

    fn stack(&self, role: Role) -> Vec<(String, usize, usize)> {
        let mut layers = Vec::new();
        let mut prev = self.channels;
        let prefix = if role == Role::Discriminator {
            "conv"
        } else {
            "enc"
        };
        for l in 0..self.depth {
            layers.push((format!("{prefix}{l}"), prev, self.enc_channels(l)));
            prev = self.enc_channels(l);
        }
        if role == Role::Discriminator {
            return layers;
        }
        layers.push(("bottleneck".into(), prev, self.bottleneck_channels()));
        prev = self.bottleneck_channels();
        for l in (0..self.depth).rev() {
            let skip = if role == Role::Generator {
                self.enc_channels(l)
            } else {
                0
            };
            layers.push((format!("dec{l}"), prev + skip, self.dec_channels(l)));
            prev = self.dec_channels(l);
        }
        layers.push(("out".into(), prev, self.channels));
        layers
    }

    fn disc_features(&self) -> usize {
        let side = self.image_size >> self.depth;
        self.enc_channels(self.depth - 1) * side * side
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.channels,
            self.width,
            self.depth,
            self.mapper_width,
            self.mapper_depth,
        ];
        if sizes.contains(&0) {
            return Err(Error::Invalid(
                "channels, widths and depths must be positive".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if !self
            .image_size
            .is_multiple_of(1 << self.depth.max(self.mapper_depth))
        {
            return Err(Error::Invalid(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.depth
            )));
        }
        Ok(())
    }

    fn check_spatial(&self, shape: &[usize], op: &'static str) -> Result<()> {
        let r = shape.len();
        let (c, h, w) = (shape[r - 3], shape[r - 2], shape[r - 1]);
        if c != self.channels {
            return Err(Error::shape(
                op,
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        let f = 1 << self.depth;
        if h % f != 0 || w % f != 0 {
            return Err(Error::shape(
                op,
                format!("spatial size {h}x{w} not divisible by {f}"),
            ));
        }
        Ok(())
    }
}

/// He-style initialization: weights ~ N(0, 2/fan_in), zero biases.
pub fn init_params(spec: &ArchSpec, role: Role, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = SplitMix64::new(derive_seed(seed, role.tag()));
    let k = spec.kernel;
    let mut params = ParamSet::new();
    for (name, cin, cout) in spec.layers(role) {
        let fan_in = cin * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = (0..cout * fan_in).map(|_| std * rng.normal()).collect();
        params.insert(
            format!("{name}.weight"),
            Tensor::new(vec![cout, cin, k, k], w)?,
        )?;
        params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
    }
    if role == Role::Discriminator {
        let f = spec.disc_features();
        let std = (2.0 / f as f64).sqrt();
        let w = (0..f).map(|_| std * rng.normal()).collect();
        params.insert("fc.weight", Tensor::new(vec![1, f], w)?)?;
        params.insert("fc.bias", Tensor::zeros(&[1]))?;
    }
    Ok(params)
}

fn conv(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    tape.conv2d_same(x, w, b)
}

fn conv_act(tape: &mut Tape, p: &Bound, spec: &ArchSpec, name: &str, x: Var) -> Result<Var> {
    let y = conv(tape, p, name, x)?;
    tape.leaky_relu(y, spec.slope)
}

fn batched(tape: &Tape, x: Var, spec: &ArchSpec, op: &'static str) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.len() != 4 {
        return Err(Error::shape(
            op,
            format!("expected [N,C,H,W], got {shape:?}"),
        ));
    }
    spec.check_spatial(shape, op)
}

/// U-Net generator on a batch `[N,C,H,W]`; output has the input's shape.
pub fn generator(tape: &mut Tape, p: &Bound, spec: &ArchSpec, x: Var) -> Result<Var> {
    batched(tape, x, spec, "generator_forward")?;
    let mut skips = Vec::with_capacity(spec.depth);
    let mut h = x;
    for l in 0..spec.depth {
        let e = conv_act(tape, p, spec, &format!("enc{l}"), h)?;
        skips.push(e);
        h = tape.pool_avg2(e)?;
    }
    h = conv_act(tape, p, spec, "bottleneck", h)?;
    for l in (0..spec.depth).rev() {
        let up = tape.upsample_nearest2(h)?;
        let cat = tape.concat_channels(up, skips[l])?;
        h = conv_act(tape, p, spec, &format!("dec{l}"), cat)?;
    }
    let out = conv(tape, p, "out", h)?;
    tape.sigmoid(out)
}

/// Encoder-decoder without skips, used as an inverse mapping `Y → X`.
pub fn mapper(tape: &mut Tape, p: &Bound, spec: &ArchSpec, y: Var) -> Result<Var> {
    let spec = &spec.mapper_view();
    batched(tape, y, spec, "mapper_forward")?;
    let mut h = y;
    for l in 0..spec.depth {
        let e = conv_act(tape, p, spec, &format!("enc{l}"), h)?;
        h = tape.pool_avg2(e)?;
    }
    h = conv_act(tape, p, spec, "bottleneck", h)?;
    for l in (0..spec.depth).rev() {
        let up = tape.upsample_nearest2(h)?;
        h = conv_act(tape, p, spec, &format!("dec{l}"), up)?;
    }
    let out = conv(tape, p, "out", h)?;
    tape.sigmoid(out)
}

/// Discriminator logits `[N,1]`; probabilities are `σ(logits)`.
pub fn discriminator_logits(tape: &mut Tape, p: &Bound, spec: &ArchSpec, img: Var) -> Result<Var> {
    batched(tape, img, spec, "discriminator_forward")?;
    let shape = tape.value(img).shape().to_vec();
    if shape[2] != spec.image_size || shape[3] != spec.image_size {
        return Err(Error::shape(
            "discriminator_forward",
            format!(
                "expected {0}x{0} images, got {1}x{2}",
                spec.image_size, shape[2], shape[3]
            ),
        ));
    }
    let mut h = img;
    for l in 0..spec.depth {
        let c = conv_act(tape, p, spec, &format!("conv{l}"), h)?;
        h = tape.pool_avg2(c)?;
    }
    let flat = tape.reshape(h, &[shape[0], spec.disc_features()])?;
    tape.dense(flat, p.var("fc.weight")?, p.var("fc.bias")?)
}

fn as_batch(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.rank() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            Ok((x.clone().reshape(&shape)?, true))
        }
        4 => Ok((x.clone(), false)),
        _ => Err(Error::shape(
            "forward",
            format!("expected [C,H,W] or [N,C,H,W], got {:?}", x.shape()),
        )),
    }
}

type Net = fn(&mut Tape, &Bound, &ArchSpec, Var) -> Result<Var>;

fn run_image_net(net: Net, params: &ParamSet, spec: &ArchSpec, x: &Tensor) -> Result<Tensor> {
    let (batch, single) = as_batch(x)?;
    let mut tape = Tape::inference();
    let p = params.bind(&mut tape);
    let input = tape.leaf(batch);
    let out = net(&mut tape, &p, spec, input)?;
    let out = tape.value(out).clone();
    if single {
        out.reshape(x.shape())
    } else {
        Ok(out)
    }
}

/// `G(x)` for one image `[C,H,W]` or a batch `[N,C,H,W]`.
pub fn generator_forward(params: &ParamSet, spec: &ArchSpec, x: &Tensor) -> Result<Tensor> {
    run_image_net(generator, params, spec, x)
}

/// `ψ⁻¹(y)` for one image or a batch.
pub fn mapper_forward(params: &ParamSet, spec: &ArchSpec, y: &Tensor) -> Result<Tensor> {
    run_image_net(mapper, params, spec, y)
}

/// `D(img)` probabilities, one per image in the batch.
pub fn discriminator_forward(params: &ParamSet, spec: &ArchSpec, img: &Tensor) -> Result<Vec<f64>> {
    let (batch, _) = as_batch(img)?;
    let mut tape = Tape::inference();
    let p = params.bind(&mut tape);
    let input = tape.leaf(batch);
    let logits = discriminator_logits(&mut tape, &p, spec, input)?;
    let probs = tape.sigmoid(logits)?;
    Ok(tape.value(probs).data().to_vec())
}
